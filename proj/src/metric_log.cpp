#include "saspec/metric_log.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "saspec/error.hpp"

namespace saspec {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json real(double x) {
  if (std::isnan(x)) return "NaN";
  if (std::isinf(x)) return x > 0 ? "Infinity" : "-Infinity";
  return x;
}

double as_real(const ordered_json& j, const char* key) {
  const ordered_json& v = j.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    if (s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-Infinity") return -std::numeric_limits<double>::infinity();
  }
  throw std::invalid_argument(std::string("field '") + key + "' is not a number");
}

std::optional<double> as_optional_real(const ordered_json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return as_real(j, key);
}

}  // namespace

MetricRecord make_metric_record(const LayerObservation& obs, std::string layer, VerdictStatus verdict,
                                std::optional<double> loss) {
  MetricRecord r;
  r.step = obs.distribution.step;
  r.layer = std::move(layer);
  r.sa_mean = obs.distribution.mean;
  r.sa_frac_positive = obs.distribution.frac_positive;
  r.sa_frac_negative = obs.distribution.frac_negative;
  r.sa_quantiles = obs.distribution.quantiles;
  r.weight_sigma1 = obs.baselines.weight_sigma1;
  r.grad_sigma1 = obs.baselines.grad_sigma1;
  r.stable_rank = obs.baselines.stable_rank;
  r.max_activation = obs.baselines.max_activation;
  r.pathology_median = obs.pathology_median;
  r.verdict = verdict;
  r.loss = loss;
  return r;
}

std::string format_metric_line(const MetricRecord& r) {
  ordered_json j;
  j["step"] = r.step;
  j["layer"] = r.layer;
  j["sa_mean"] = real(r.sa_mean);
  j["sa_frac_positive"] = real(r.sa_frac_positive);
  j["sa_frac_negative"] = real(r.sa_frac_negative);
  ordered_json q = ordered_json::array();
  for (double x : r.sa_quantiles) q.push_back(real(x));
  j["sa_quantiles"] = std::move(q);
  j["weight_sigma1"] = real(r.weight_sigma1);
  j["grad_sigma1"] = r.grad_sigma1 ? real(*r.grad_sigma1) : ordered_json(nullptr);
  j["stable_rank"] = real(r.stable_rank);
  j["max_activation"] = real(r.max_activation);
  j["pathology_median"] = real(r.pathology_median);
  j["verdict"] = std::string(to_string(r.verdict));
  j["loss"] = r.loss ? real(*r.loss) : ordered_json(nullptr);
  return j.dump();
}

MetricRecord parse_metric_line(std::string_view line, std::size_t line_number) {
  try {
    const ordered_json j = ordered_json::parse(line);
    if (!j.is_object()) throw std::invalid_argument("not a JSON object");
    MetricRecord r;
    r.step = j.at("step").get<std::uint64_t>();
    r.layer = j.at("layer").get<std::string>();
    r.sa_mean = as_real(j, "sa_mean");
    r.sa_frac_positive = as_real(j, "sa_frac_positive");
    r.sa_frac_negative = as_real(j, "sa_frac_negative");
    const ordered_json& q = j.at("sa_quantiles");
    if (!q.is_array() || q.size() != r.sa_quantiles.size()) throw std::invalid_argument("sa_quantiles needs 5 values");
    for (std::size_t i = 0; i < r.sa_quantiles.size(); ++i) {
      ordered_json wrap = {{"q", q[i]}};
      r.sa_quantiles[i] = as_real(wrap, "q");
    }
    r.weight_sigma1 = as_real(j, "weight_sigma1");
    r.grad_sigma1 = as_optional_real(j, "grad_sigma1");
    r.stable_rank = as_real(j, "stable_rank");
    r.max_activation = as_real(j, "max_activation");
    r.pathology_median = as_real(j, "pathology_median");
    r.verdict = verdict_status_from_string(j.at("verdict").get<std::string>());
    r.loss = as_optional_real(j, "loss");
    return r;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kParseError, "line " + std::to_string(line_number) + ": " + e.what());
  }
}

void append_metric(const std::filesystem::path& path, const MetricRecord& record) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot open " + path.string() + " for appending");
  out << format_metric_line(record) << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::kIoError, "append to " + path.string() + " failed");
}

std::vector<MetricRecord> read_metric_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    MetricRecord r = parse_metric_line(line, line_number);
    if (!out.empty() && r.step < out.back().step) {
      throw Error(ErrorCode::kOrderViolation, "line " + std::to_string(line_number) + ": step " +
                                                  std::to_string(r.step) + " follows step " +
                                                  std::to_string(out.back().step));
    }
    out.push_back(std::move(r));
  }
  if (in.bad()) throw Error(ErrorCode::kIoError, "read of " + path.string() + " failed");
  return out;
}

SADistribution as_distribution(const MetricRecord& record) {
  SADistribution d;
  d.step = record.step;
  d.mean = record.sa_mean;
  d.frac_positive = record.sa_frac_positive;
  d.frac_negative = record.sa_frac_negative;
  d.quantiles = record.sa_quantiles;
  return d;
}

}  // namespace saspec
