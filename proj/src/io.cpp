#include "panelqmle/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace panelqmle {

using nlohmann::json;

namespace {

std::string where(const ConfigDocument& doc, const std::string& field) {
  std::string s = doc.path + ": field '" + field + "'";
  const int line = doc.line_of(field);
  if (line > 0) s += " (line " + std::to_string(line) + ")";
  return s;
}

const json* find_field(const json& obj, const std::string& field) {
  if (!obj.is_object()) return nullptr;
  auto it = obj.find(field);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

std::vector<double> number_list(const ConfigDocument& doc, const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(where(doc, field) + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError(where(doc, field) + ": expected an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line, int lineno, const std::string& path) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw InvalidInput(path + ":" + std::to_string(lineno) + ": unterminated quoted field");
  fields.push_back(cur);
  return fields;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

int ConfigDocument::line_of(const std::string& key) const {
  const std::string needle = "\"" + key + "\"";
  const std::size_t pos = text.find(needle);
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

ConfigDocument parse_config(const std::string& text, const std::string& origin) {
  ConfigDocument doc;
  doc.text = text;
  doc.path = origin;
  try {
    doc.json = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t byte = e.byte == 0 ? 0 : e.byte - 1;
    const std::size_t upto = std::min(byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
    const std::size_t line_start = text.rfind('\n', upto == 0 ? 0 : upto - 1);
    const std::size_t col = line_start == std::string::npos ? upto + 1 : upto - line_start;
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": malformed JSON");
  }
  if (!doc.json.is_object()) throw ConfigError(origin + ": top level must be a JSON object");
  return doc;
}

ConfigDocument load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

double require_number(const ConfigDocument& doc, const json& obj, const std::string& field) {
  const json* v = find_field(obj, field);
  if (!v) throw ConfigError(where(doc, field) + ": missing required field");
  if (!v->is_number()) throw ConfigError(where(doc, field) + ": expected a number");
  return v->get<double>();
}

int require_int(const ConfigDocument& doc, const json& obj, const std::string& field) {
  const json* v = find_field(obj, field);
  if (!v) throw ConfigError(where(doc, field) + ": missing required field");
  if (!v->is_number_integer()) throw ConfigError(where(doc, field) + ": expected an integer");
  return v->get<int>();
}

double number_or(const ConfigDocument& doc, const json& obj, const std::string& field, double fallback) {
  return find_field(obj, field) ? require_number(doc, obj, field) : fallback;
}

int int_or(const ConfigDocument& doc, const json& obj, const std::string& field, int fallback) {
  return find_field(obj, field) ? require_int(doc, obj, field) : fallback;
}

std::string string_or(const ConfigDocument& doc, const json& obj, const std::string& field,
                      const std::string& fallback) {
  const json* v = find_field(obj, field);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(where(doc, field) + ": expected a string");
  return v->get<std::string>();
}

SeriesSpec series_from_json(const ConfigDocument& doc, const json& j, const std::string& field) {
  SeriesSpec s;
  if (j.is_number()) return SeriesSpec::constant_value(j.get<double>());
  if (j.is_array()) {
    s.kind = SeriesSpec::Kind::table;
    s.table = number_list(doc, j, field);
    return s;
  }
  if (!j.is_object()) throw ConfigError(where(doc, field) + ": expected a series object, number or array");
  const std::string type = string_or(doc, j, "type", "constant");
  if (type == "constant") {
    s.kind = SeriesSpec::Kind::constant;
    s.value = number_or(doc, j, "value", 0.0);
  } else if (type == "linear") {
    s.kind = SeriesSpec::Kind::linear;
    s.intercept = number_or(doc, j, "intercept", 0.0);
    s.slope = number_or(doc, j, "slope", 0.0);
  } else if (type == "poly") {
    s.kind = SeriesSpec::Kind::poly;
    const json* c = find_field(j, "coeffs");
    if (!c) throw ConfigError(where(doc, field + ".coeffs") + ": missing required field");
    s.coeffs = number_list(doc, *c, field + ".coeffs");
  } else if (type == "sine") {
    s.kind = SeriesSpec::Kind::sine;
    s.offset = number_or(doc, j, "offset", 0.0);
    s.amplitude = number_or(doc, j, "amplitude", 1.0);
    s.frequency = number_or(doc, j, "frequency", 1.0);
    s.phase = number_or(doc, j, "phase", 0.0);
  } else if (type == "table") {
    s.kind = SeriesSpec::Kind::table;
    const json* v = find_field(j, "values");
    if (!v) throw ConfigError(where(doc, field + ".values") + ": missing required field");
    s.table = number_list(doc, *v, field + ".values");
  } else {
    throw ConfigError(where(doc, field) + ": unknown series type '" + type + "'");
  }
  return s;
}

json series_to_json(const SeriesSpec& s) {
  json j;
  j["type"] = kind_name(s.kind);
  switch (s.kind) {
    case SeriesSpec::Kind::constant: j["value"] = s.value; break;
    case SeriesSpec::Kind::linear:
      j["intercept"] = s.intercept;
      j["slope"] = s.slope;
      break;
    case SeriesSpec::Kind::poly: j["coeffs"] = s.coeffs; break;
    case SeriesSpec::Kind::sine:
      j["offset"] = s.offset;
      j["amplitude"] = s.amplitude;
      j["frequency"] = s.frequency;
      j["phase"] = s.phase;
      break;
    case SeriesSpec::Kind::table: j["values"] = s.table; break;
  }
  return j;
}

DgpConfig dgp_config_from_json(const ConfigDocument& doc, bool require_N) {
  const json& j = doc.json;
  DgpConfig c;
  c.N = require_N ? require_int(doc, j, "N") : int_or(doc, j, "N", 1);
  c.T = require_int(doc, j, "T");
  c.alpha = require_number(doc, j, "alpha");
  if (const json* f = find_field(j, "factors")) {
    if (!f->is_array()) throw ConfigError(where(doc, "factors") + ": expected an array of series");
    for (std::size_t k = 0; k < f->size(); ++k) {
      c.factors.push_back(series_from_json(doc, (*f)[k], "factors[" + std::to_string(k) + "]"));
    }
  }
  c.r = int_or(doc, j, "r", static_cast<int>(c.factors.size()));
  if (c.r != static_cast<int>(c.factors.size())) {
    throw ConfigError(where(doc, "r") + ": r=" + std::to_string(c.r) + " but " + std::to_string(c.factors.size()) +
                      " factor series are given");
  }
  if (const json* d = find_field(j, "delta")) c.delta = series_from_json(doc, *d, "delta");
  if (const json* s = find_field(j, "sigma2")) c.sigma2 = series_from_json(doc, *s, "sigma2");
  if (const json* s = find_field(j, "shocks")) {
    const std::string type = s->is_string() ? s->get<std::string>() : string_or(doc, *s, "type", "gaussian");
    if (type == "gaussian") {
      c.shocks.kind = ShockSpec::Kind::gaussian;
    } else if (type == "student_t") {
      c.shocks.kind = ShockSpec::Kind::student_t;
      c.shocks.df = require_number(doc, *s, "df");
    } else if (type == "centered_chi2") {
      c.shocks.kind = ShockSpec::Kind::centered_chi2;
      c.shocks.df = require_number(doc, *s, "df");
    } else {
      throw ConfigError(where(doc, "shocks") + ": unknown shock distribution '" + type + "'");
    }
  }
  if (const json* l = find_field(j, "loadings")) {
    const std::string type = l->is_string() ? l->get<std::string>() : string_or(doc, *l, "type", "gaussian");
    if (type == "gaussian") {
      c.loadings.kind = LoadingSpec::Kind::gaussian;
    } else if (type == "rademacher_scaled" || type == "rademacher") {
      c.loadings.kind = LoadingSpec::Kind::rademacher_scaled;
    } else {
      throw ConfigError(where(doc, "loadings") + ": unknown loading distribution '" + type + "'");
    }
    if (l->is_object()) c.loadings.scale = number_or(doc, *l, "scale", 1.0);
  }
  c.burn_in = int_or(doc, j, "burn_in", 200);
  if (const json* s = find_field(j, "seed")) {
    if (s->is_number_unsigned()) {
      c.seed = s->get<std::uint64_t>();
    } else if (s->is_number_integer() && s->get<std::int64_t>() >= 0) {
      c.seed = static_cast<std::uint64_t>(s->get<std::int64_t>());
    } else {
      throw ConfigError(where(doc, "seed") + ": expected a nonnegative integer");
    }
  }
  try {
    DgpConfig check = c;
    if (!require_N && check.N < 1) check.N = 1;
    check.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(doc.path + ": " + e.what());
  }
  return c;
}

json dgp_config_to_json(const DgpConfig& c) {
  json j;
  j["N"] = c.N;
  j["T"] = c.T;
  j["r"] = c.r;
  j["alpha"] = c.alpha;
  j["delta"] = series_to_json(c.delta);
  j["factors"] = json::array();
  for (const auto& f : c.factors) j["factors"].push_back(series_to_json(f));
  j["sigma2"] = series_to_json(c.sigma2);
  j["shocks"] = {{"type", kind_name(c.shocks.kind)}};
  if (c.shocks.kind != ShockSpec::Kind::gaussian) j["shocks"]["df"] = c.shocks.df;
  j["loadings"] = {{"type", kind_name(c.loadings.kind)}, {"scale", c.loadings.scale}};
  j["burn_in"] = c.burn_in;
  j["seed"] = c.seed;
  return j;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path);
  out << content;
  if (!out) throw InvalidInput("write failed for " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::string s;
  for (std::size_t k = 0; k < header.size(); ++k) s += (k ? "," : "") + csv_escape(header[k]);
  s += "\n";
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) s += (k ? "," : "") + csv_escape(row[k]);
    s += "\n";
  }
  write_text(path, s);
}

void write_panel_csv(const std::string& path, const PanelData& data) {
  std::vector<std::string> header;
  for (int t = 1; t <= data.T(); ++t) header.push_back("t" + std::to_string(t));
  std::vector<std::vector<std::string>> rows(data.N());
  for (int i = 0; i < data.N(); ++i)
    for (int t = 0; t < data.T(); ++t) rows[i].push_back(format_double(data.Y(i, t)));
  write_csv(path, header, rows);
}

PanelData read_panel_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open panel " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput(path + ": empty file");
  const std::vector<std::string> header = split_csv_line(line, 1, path);
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k] != "t" + std::to_string(k + 1)) {
      throw InvalidInput(path + ":1: header column " + std::to_string(k + 1) + " must be 't" + std::to_string(k + 1) +
                         "', found '" + header[k] + "'");
    }
  }
  const int T = static_cast<int>(header.size());
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = split_csv_line(line, lineno, path);
    if (static_cast<int>(fields.size()) != T) {
      throw InvalidInput(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(T) + " fields, found " +
                         std::to_string(fields.size()));
    }
    std::vector<double> row(T);
    for (int t = 0; t < T; ++t) {
      const char* begin = fields[t].c_str();
      char* end = nullptr;
      errno = 0;
      row[t] = std::strtod(begin, &end);
      if (end == begin || *end != '\0' || errno == ERANGE || !std::isfinite(row[t])) {
        throw InvalidInput(path + ":" + std::to_string(lineno) + ": column t" + std::to_string(t + 1) +
                           " is not a finite number: '" + fields[t] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  PanelData data;
  data.Y.resize(static_cast<Eigen::Index>(rows.size()), T);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int t = 0; t < T; ++t) data.Y(static_cast<Eigen::Index>(i), t) = rows[i][t];
  return data;
}

json json_number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json json_vector(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(json_number(v(i)));
  return a;
}

json json_matrix(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(json_vector(m.row(i).transpose()));
  return a;
}

}  // namespace panelqmle
