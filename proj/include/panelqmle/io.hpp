#pragma once

// JSON configs and CSV tables.

#include <string>
#include <vector>

#include <json.hpp>

#include "panelqmle/errors.hpp"
#include "panelqmle/likelihood.hpp"
#include "panelqmle/simulation.hpp"

namespace panelqmle {

// Malformed or invalid configuration; the message names the field and, when known, the line.
class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

struct ConfigDocument {
  nlohmann::json json;
  std::string text;
  std::string path;

  // 1-based line of the first occurrence of "key" in the source text, 0 when absent.
  int line_of(const std::string& key) const;
};

ConfigDocument load_config(const std::string& path);
ConfigDocument parse_config(const std::string& text, const std::string& origin = "<config>");

// Field-level readers: throw ConfigError naming the field for missing or mistyped values.
double require_number(const ConfigDocument& doc, const nlohmann::json& obj, const std::string& field);
int require_int(const ConfigDocument& doc, const nlohmann::json& obj, const std::string& field);
double number_or(const ConfigDocument& doc, const nlohmann::json& obj, const std::string& field, double fallback);
int int_or(const ConfigDocument& doc, const nlohmann::json& obj, const std::string& field, int fallback);
std::string string_or(const ConfigDocument& doc, const nlohmann::json& obj, const std::string& field,
                      const std::string& fallback);

SeriesSpec series_from_json(const ConfigDocument& doc, const nlohmann::json& j, const std::string& field);
nlohmann::json series_to_json(const SeriesSpec& s);

// Keys: N, T, r, alpha, delta, factors, sigma2, shocks, loadings, burn_in, seed. N is optional
// when require_N is false (bound computations).
DgpConfig dgp_config_from_json(const ConfigDocument& doc, bool require_N = true);
nlohmann::json dgp_config_to_json(const DgpConfig& config);

// %.17g
std::string format_double(double x);

// Header t1..tT, one row per individual.
void write_panel_csv(const std::string& path, const PanelData& data);
PanelData read_panel_csv(const std::string& path);

// Generic table writer: header plus rows already formatted as fields.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

void write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

// Doubles as JSON numbers, NaN and infinities as null.
nlohmann::json json_number(double x);
nlohmann::json json_vector(const Eigen::VectorXd& v);
nlohmann::json json_matrix(const Eigen::MatrixXd& m);  // array of rows

}  // namespace panelqmle
