#include "smo/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "smo/errors.hpp"

namespace smo {

void OpticalConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(wavelength_nm > 0)) fail("wavelength_nm must be > 0");
  if (!(na > 0)) fail("na must be > 0");
  if (!(pixel_nm > 0)) fail("pixel_nm must be > 0");
  if (n_mask < 8) fail("n_mask must be >= 8");
  if (n_source < 3 || n_source % 2 == 0) fail("n_source must be odd and >= 3");
  if (!(sigma_inner >= 0 && sigma_inner < sigma_outer && sigma_outer <= 1))
    fail("require 0 <= sigma_inner < sigma_outer <= 1");
  if (!(dose_min > 0 && dose_min <= 1 && dose_max >= 1)) fail("require 0 < dose_min <= 1 <= dose_max");
  if (!(resist_steepness > 0)) fail("resist_steepness must be > 0");
  if (!(gamma >= 0)) fail("gamma must be >= 0");
  if (!(eta >= 0)) fail("eta must be >= 0");
  if (q_kernels < 0) fail("q_kernels must be >= 0");
  if (parallel_width < 1) fail("parallel_width must be >= 1");
  for (double v : {wavelength_nm, na, pixel_nm, sigma_outer, sigma_inner, dose_min, dose_max,
                   resist_threshold, resist_steepness, alpha_m, m0, alpha_j, j0, gamma, eta}) {
    if (!std::isfinite(v)) fail("non-finite configuration value");
  }
}

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!line.empty() && is_space(line.back())) line.pop_back();
    size_t start = 0;
    while (start < line.size() && is_space(line[start])) ++start;
    if (start == line.size()) continue;
    auto eq = line.find('=', start);
    if (eq == std::string::npos) throw ParseError("expected key=value", lineno);
    std::string key = line.substr(start, eq - start);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && is_space(key.back())) key.pop_back();
    size_t vs = 0;
    while (vs < value.size() && is_space(value[vs])) ++vs;
    value.erase(0, vs);
    if (key.empty()) throw ParseError("empty key", lineno);
    kv[key] = value;
  }
  return kv;
}

std::map<std::string, std::string> load_key_values(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  return parse_key_values(f);
}

namespace {

double to_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    double d = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("invalid numeric value for " + key + ": '" + value + "'");
  }
}

int to_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    long l = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<int>(l);
  } catch (const std::exception&) {
    throw ConfigError("invalid integer value for " + key + ": '" + value + "'");
  }
}

template <typename T, typename Conv>
bool take(std::map<std::string, std::string>& kv, const std::string& key, T& out, Conv conv) {
  auto it = kv.find(key);
  if (it == kv.end()) return false;
  out = conv(key, it->second);
  kv.erase(it);
  return true;
}

}  // namespace

void apply_optical_keys(std::map<std::string, std::string>& kv, OpticalConfig& cfg) {
  take(kv, "wavelength_nm", cfg.wavelength_nm, to_double);
  take(kv, "na", cfg.na, to_double);
  take(kv, "pixel_nm", cfg.pixel_nm, to_double);
  take(kv, "n_mask", cfg.n_mask, to_int);
  take(kv, "n_source", cfg.n_source, to_int);
  take(kv, "sigma_outer", cfg.sigma_outer, to_double);
  take(kv, "sigma_inner", cfg.sigma_inner, to_double);
  take(kv, "dose_min", cfg.dose_min, to_double);
  take(kv, "dose_max", cfg.dose_max, to_double);
  take(kv, "resist_threshold", cfg.resist_threshold, to_double);
  take(kv, "resist_steepness", cfg.resist_steepness, to_double);
  take(kv, "alpha_m", cfg.alpha_m, to_double);
  take(kv, "m0", cfg.m0, to_double);
  take(kv, "alpha_j", cfg.alpha_j, to_double);
  take(kv, "j0", cfg.j0, to_double);
  take(kv, "gamma", cfg.gamma, to_double);
  take(kv, "eta", cfg.eta, to_double);
  take(kv, "q_kernels", cfg.q_kernels, to_int);
  take(kv, "parallel_width", cfg.parallel_width, to_int);
  take(kv, "source_threshold", cfg.source_threshold, to_double);
}

std::string to_key_values(const OpticalConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "wavelength_nm=" << cfg.wavelength_nm << "\n"
     << "na=" << cfg.na << "\n"
     << "pixel_nm=" << cfg.pixel_nm << "\n"
     << "n_mask=" << cfg.n_mask << "\n"
     << "n_source=" << cfg.n_source << "\n"
     << "sigma_outer=" << cfg.sigma_outer << "\n"
     << "sigma_inner=" << cfg.sigma_inner << "\n"
     << "dose_min=" << cfg.dose_min << "\n"
     << "dose_max=" << cfg.dose_max << "\n"
     << "resist_threshold=" << cfg.resist_threshold << "\n"
     << "resist_steepness=" << cfg.resist_steepness << "\n"
     << "alpha_m=" << cfg.alpha_m << "\n"
     << "m0=" << cfg.m0 << "\n"
     << "alpha_j=" << cfg.alpha_j << "\n"
     << "j0=" << cfg.j0 << "\n"
     << "gamma=" << cfg.gamma << "\n"
     << "eta=" << cfg.eta << "\n"
     << "q_kernels=" << cfg.q_kernels << "\n"
     << "parallel_width=" << cfg.parallel_width << "\n"
     << "source_threshold=" << cfg.source_threshold << "\n";
  return os.str();
}

}  // namespace smo
