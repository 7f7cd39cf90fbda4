#include "modrestore/evaluation.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "modrestore/condition.hpp"

namespace modrestore {

std::string to_string(Polarity p) { return p == Polarity::HigherIsBetter ? "higher" : "lower"; }

MetricPlugin psnr_metric() {
  return {"psnr", Polarity::HigherIsBetter, [](const Image& pred, const Image& ref) { return psnr(pred, ref); }};
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

std::filesystem::path scratch_dir() {
  static std::atomic<std::uint64_t> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("modrestore-metric-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

MetricPlugin external_metric(const std::filesystem::path& executable, std::string name, Polarity polarity) {
  if (!std::filesystem::exists(executable)) throw ConfigError("metric plugin not found: " + executable.string());
  auto exe = std::filesystem::absolute(executable).string();
  auto score = [exe](const Image& pred, const Image& ref) {
    const auto dir = scratch_dir();
    struct Cleanup {
      std::filesystem::path p;
      ~Cleanup() {
        std::error_code ec;
        std::filesystem::remove_all(p, ec);
      }
    } cleanup{dir};
    write_png(dir / "pred.png", pred);
    write_png(dir / "ref.png", ref);
    const std::string cmd =
        shell_quote(exe) + " " + shell_quote((dir / "pred.png").string()) + " " + shell_quote((dir / "ref.png").string());
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw Error("cannot run metric plugin " + exe);
    std::string out;
    char buf[256];
    while (std::fgets(buf, sizeof buf, pipe)) out += buf;
    const int status = ::pclose(pipe);
    if (status != 0) throw Error("metric plugin " + exe + " failed with status " + std::to_string(status));
    const char* begin = out.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) throw Error("metric plugin " + exe + " printed no number");
    return v;
  };
  return {std::move(name), polarity, std::move(score)};
}

MetricPlugin parse_metric(std::string_view token) {
  if (token == "psnr") return psnr_metric();
  constexpr std::string_view prefix = "plugin:";
  if (token.substr(0, prefix.size()) != prefix) throw ConfigError("unknown metric '" + std::string(token) + "'");
  std::string path(token.substr(prefix.size()));
  Polarity pol = Polarity::LowerIsBetter;
  for (auto [suffix, p] : {std::pair{":lower", Polarity::LowerIsBetter}, std::pair{":higher", Polarity::HigherIsBetter}}) {
    const std::string s(suffix);
    if (path.size() > s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0) {
      path.resize(path.size() - s.size());
      pol = p;
    }
  }
  if (path.empty()) throw ConfigError("metric plugin needs a path");
  return external_metric(path, std::filesystem::path(path).stem().string(), pol);
}

std::vector<MetricPlugin> parse_metrics(std::string_view list) {
  std::vector<MetricPlugin> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const auto comma = list.find(',', pos);
    const auto token = list.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    if (token.empty()) throw ConfigError("empty metric name in '" + std::string(list) + "'");
    out.push_back(parse_metric(token));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = i + 1; j < out.size(); ++j)
      if (out[i].name == out[j].name) throw ConfigError("duplicate metric '" + out[i].name + "'");
  return out;
}

namespace {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

Json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_number(v);
}

}  // namespace

std::string spec_key(const DegradationSpec& spec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "blur%g_sigma%g", spec.blur_r, spec.noise_sigma);
  return buf;
}

std::uint64_t degradation_seed(std::string_view image, const DegradationSpec& spec) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  mix(image);
  mix("|");
  mix(spec_key(spec));
  return h;
}

void EvalGrid::validate() const {
  if (specs.empty()) throw ConfigError("evaluation grid is empty");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    specs[i].validate();
    for (std::size_t j = 0; j < i; ++j)
      if (spec_key(specs[j]) == spec_key(specs[i])) throw ConfigError("duplicate grid point " + spec_key(specs[i]));
  }
}

EvalGrid EvalGrid::defaults() {
  return {{{0, 30}, {0, 50}, {2, 0}, {4, 0}, {1, 15}, {1, 30}, {2, 30}, {2, 50}, {4, 30}, {4, 50}}};
}

void to_json(Json& j, const EvalGrid& g) { j = Json{{"specs", g.specs}}; }

void from_json(const Json& j, EvalGrid& g) {
  const Json& specs = j.is_array() ? j : j.at("specs");
  g.specs = specs.get<std::vector<DegradationSpec>>();
}

EvalGrid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid " + path.string());
  EvalGrid g;
  try {
    g = Json::parse(in).get<EvalGrid>();
  } catch (const Json::exception& e) {
    throw ConfigError("invalid grid " + path.string() + ": " + e.what());
  }
  g.validate();
  return g;
}

const RestorationModel* BaselineSet::find(const DegradationSpec& spec) const {
  if (auto it = per_spec.find(spec_key(spec)); it != per_spec.end()) return &it->second;
  return shared ? &*shared : nullptr;
}

BaselineSet load_baselines(const std::filesystem::path& dir) {
  BaselineSet set;
  if (std::filesystem::exists(dir / kGeneratorFile)) {
    set.shared = load_model_dir(dir);
    return set;
  }
  if (!std::filesystem::is_directory(dir)) throw ConfigError("baseline directory not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_directory() && std::filesystem::exists(entry.path() / kGeneratorFile)) {
      set.per_spec.emplace(entry.path().filename().string(), load_model_dir(entry.path()));
    }
  }
  if (set.empty()) throw ConfigError("no baseline models under " + dir.string());
  return set;
}

std::optional<double> EvalReport::distance(const EvalRow& row, std::size_t metric) const {
  if (row.baseline.empty()) return std::nullopt;
  const double m = row.model.at(metric);
  const double b = row.baseline.at(metric);
  if (m == b) return 0.0;
  return polarities.at(metric) == Polarity::LowerIsBetter ? m - b : b - m;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "image,blur,sigma";
  for (const auto& n : metric_names) out << ',' << n << ',' << n << "_baseline," << n << "_distance";
  out << '\n';
  auto emit = [&](const EvalRow& r) {
    out << r.image << ',' << format_number(r.spec.blur_r) << ',' << format_number(r.spec.noise_sigma);
    for (std::size_t m = 0; m < metric_names.size(); ++m) {
      out << ',' << format_number(r.model[m]) << ',';
      if (!r.baseline.empty()) out << format_number(r.baseline[m]);
      out << ',';
      if (auto d = distance(r, m)) out << format_number(*d);
    }
    out << '\n';
  };
  for (const auto& r : rows) emit(r);
  for (const auto& r : aggregates) emit(r);
  return out.str();
}

Json EvalReport::to_json() const {
  Json metrics = Json::array();
  for (std::size_t m = 0; m < metric_names.size(); ++m)
    metrics.push_back({{"name", metric_names[m]}, {"polarity", to_string(polarities[m])}});
  auto rows_json = [&](const std::vector<EvalRow>& src) {
    Json arr = Json::array();
    for (const auto& r : src) {
      Json values = Json::object();
      for (std::size_t m = 0; m < metric_names.size(); ++m) {
        Json v{{"model", json_number(r.model[m])}};
        if (!r.baseline.empty()) v["baseline"] = json_number(r.baseline[m]);
        if (auto d = distance(r, m)) v["distance"] = json_number(*d);
        values[metric_names[m]] = v;
      }
      arr.push_back({{"image", r.image}, {"blur", r.spec.blur_r}, {"sigma", r.spec.noise_sigma}, {"values", values}});
    }
    return arr;
  };
  return Json{{"metrics", metrics}, {"rows", rows_json(rows)}, {"aggregates", rows_json(aggregates)},
              {"warnings", warnings}};
}

namespace {

Image to_luma(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw ShapeError("grayscale conversion needs 1 or 3 channels");
  Image out(1, img.height, img.width);
  out.data = 0.299f * img.data.row(0) + 0.587f * img.data.row(1) + 0.114f * img.data.row(2);
  return out;
}

}  // namespace

EvalReport evaluate_grid(const RestorationModel& model, const BaselineSet& baselines,
                         const std::vector<NamedImage>& images, const EvalGrid& grid,
                         const std::vector<MetricPlugin>& metrics, const EvalOptions& opts) {
  grid.validate();
  model.validate();
  if (images.empty()) throw DataError("evaluation dataset is empty");
  if (metrics.empty()) throw ConfigError("no metrics requested");
  std::vector<const NamedImage*> sorted;
  for (const auto& img : images) sorted.push_back(&img);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->name < b->name; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i]->name == sorted[i - 1]->name) throw DataError("duplicate image name " + sorted[i]->name);

  EvalReport report;
  for (const auto& m : metrics) {
    report.metric_names.push_back(m.name);
    report.polarities.push_back(m.polarity);
  }
  std::vector<const RestorationModel*> base(grid.specs.size());
  for (std::size_t s = 0; s < grid.specs.size(); ++s) {
    base[s] = baselines.find(grid.specs[s]);
    if (!base[s]) report.warnings.push_back("no baseline for " + spec_key(grid.specs[s]) + "; distances omitted");
  }

  const std::size_t n = grid.specs.size() * sorted.size();
  report.rows.resize(n);
  auto score_all = [&](const Image& pred, const Image& ref) {
    std::vector<double> out;
    const Image p = opts.grayscale ? to_luma(pred) : pred;
    const Image r = opts.grayscale ? to_luma(ref) : ref;
    for (const auto& m : metrics) out.push_back(m.score(p, r));
    return out;
  };
  auto work = [&](std::size_t idx) {
    const std::size_t s = idx / sorted.size();
    const NamedImage& img = *sorted[idx % sorted.size()];
    const DegradationSpec& spec = grid.specs[s];
    const Image degraded = degrade(img.image, spec, degradation_seed(img.name, spec) ^ (opts.seed * 0x9E3779B97F4A7C15ull));
    const ConditionVector z = encode_condition(spec);
    EvalRow row{img.name, spec, score_all(model.restore(degraded, z), img.image), {}};
    if (base[s]) row.baseline = score_all(base[s]->restore(degraded, z), img.image);
    report.rows[idx] = std::move(row);
  };

  int threads = opts.threads > 0 ? opts.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        work(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t s = 0; s < grid.specs.size(); ++s) {
    EvalRow agg{"mean", grid.specs[s], std::vector<double>(metrics.size(), 0.0), {}};
    if (base[s]) agg.baseline.assign(metrics.size(), 0.0);
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const EvalRow& r = report.rows[s * sorted.size() + i];
      for (std::size_t m = 0; m < metrics.size(); ++m) {
        agg.model[m] += r.model[m];
        if (base[s]) agg.baseline[m] += r.baseline[m];
      }
    }
    for (auto& v : agg.model) v /= static_cast<double>(sorted.size());
    for (auto& v : agg.baseline) v /= static_cast<double>(sorted.size());
    report.aggregates.push_back(std::move(agg));
  }
  return report;
}

namespace {

std::vector<std::pair<DegradationSpec, double>> cells(const std::vector<DegradationSpec>& specs,
                                                      const std::vector<double>& values) {
  std::vector<std::pair<DegradationSpec, double>> out;
  for (std::size_t i = 0; i < specs.size(); ++i) out.emplace_back(specs[i], values[i]);
  return out;
}

std::vector<ReferenceTable> build_published() {
  const std::vector<DegradationSpec> t1{{0, 30}, {0, 50}, {2, 0}, {4, 0}, {1, 15},
                                        {1, 30}, {2, 30}, {2, 50}, {4, 30}, {4, 50}};
  const std::vector<DegradationSpec> t2{{0, 30}, {0, 50}, {2, 0}, {4, 0}, {1, 15}, {1, 30}, {2, 50}, {4, 50}};
  using C = ReportColumn;
  return {
      {"table1.lpips.ugan", "lpips", C::Baseline,
       cells(t1, {0.0490, 0.0957, 0.0484, 0.1331, 0.0697, 0.1140, 0.2068, 0.2557, 0.3154, 0.3510})},
      {"table1.lpips.cugan", "lpips", C::Model,
       cells(t1, {0.0522, 0.0966, 0.0525, 0.1463, 0.0714, 0.1178, 0.2019, 0.2498, 0.3075, 0.3350})},
      {"table1.lpips.distance", "lpips", C::Distance,
       cells(t1, {0.0032, 0.0009, 0.0041, 0.0132, 0.0017, 0.0038, -0.0049, -0.0059, -0.0079, -0.0160})},
      {"table1.dists.ugan", "dists", C::Baseline,
       cells(t1, {0.0603, 0.0901, 0.0499, 0.1013, 0.0716, 0.0987, 0.1430, 0.1705, 0.1994, 0.2110})},
      {"table1.dists.cugan", "dists", C::Model,
       cells(t1, {0.0639, 0.0964, 0.0525, 0.1081, 0.0727, 0.1003, 0.1392, 0.1657, 0.1982, 0.2162})},
      {"table1.dists.distance", "dists", C::Distance,
       cells(t1, {0.0036, 0.0063, 0.0026, 0.0068, 0.0011, 0.0016, -0.0038, -0.0048, -0.0012, 0.0052})},
      {"table2.psnr.unet", "psnr", C::Baseline, cells(t2, {30.62, 28.28, 30.24, 26.85, 29.12, 27.41, 24.57, 23.03})},
      // blur 2 printed as 20.07; 30.07 agrees with its 0.17 distance.
      {"table2.psnr.cunet", "psnr", C::Model, cells(t2, {30.50, 28.16, 30.07, 28.63, 29.04, 27.35, 24.55, 23.02})},
      {"table2.psnr.distance", "psnr", C::Distance, cells(t2, {0.12, 0.12, 0.17, 0.22, 0.08, 0.06, 0.02, 0.01})},
  };
}

}  // namespace

const std::vector<ReferenceTable>& published_tables() {
  static const std::vector<ReferenceTable> tables = build_published();
  return tables;
}

const ReferenceTable& published_table(std::string_view name) {
  for (const auto& t : published_tables())
    if (t.name == name) return t;
  std::string known;
  for (const auto& t : published_tables()) known += (known.empty() ? "" : ", ") + t.name;
  throw ConfigError("unknown reference table '" + std::string(name) + "' (known: " + known + ")");
}

namespace {

std::size_t metric_index(const EvalReport& report, const std::string& metric) {
  for (std::size_t m = 0; m < report.metric_names.size(); ++m)
    if (report.metric_names[m] == metric) return m;
  throw ConfigError("report has no metric '" + metric + "'");
}

std::optional<double> column_value(const EvalReport& report, const EvalRow& row, std::size_t m, ReportColumn c) {
  switch (c) {
    case ReportColumn::Model:
      return row.model[m];
    case ReportColumn::Baseline:
      if (row.baseline.empty()) return std::nullopt;
      return row.baseline[m];
    case ReportColumn::Distance:
      return report.distance(row, m);
  }
  return std::nullopt;
}

}  // namespace

ReferenceTable reference_from_report(const EvalReport& report, const std::string& metric, ReportColumn column,
                                     std::string name) {
  const std::size_t m = metric_index(report, metric);
  ReferenceTable t{std::move(name), metric, column, {}};
  for (const auto& row : report.aggregates)
    if (auto v = column_value(report, row, m, column)) t.cells.emplace_back(row.spec, *v);
  return t;
}

CompareSummary table_compare(const EvalReport& report, const ReferenceTable& reference) {
  const std::size_t m = metric_index(report, reference.metric);
  CompareSummary out{reference.name, {}, {}, {}};
  std::map<std::string, std::optional<double>> reported;
  for (const auto& row : report.aggregates) reported[spec_key(row.spec)] = column_value(report, row, m, reference.column);
  std::map<std::string, bool> seen;
  for (const auto& [spec, ref] : reference.cells) {
    const auto key = spec_key(spec);
    seen[key] = true;
    auto it = reported.find(key);
    if (it == reported.end() || !it->second) {
      out.missing_in_report.push_back(key);
      continue;
    }
    const double v = *it->second;
    out.cells.push_back({spec, v, ref, v == ref ? 0.0 : v - ref});
  }
  for (const auto& row : report.aggregates)
    if (!seen.count(spec_key(row.spec))) out.missing_in_reference.push_back(spec_key(row.spec));
  return out;
}

std::string CompareSummary::to_text() const {
  std::ostringstream out;
  out << "table " << table << '\n';
  for (const auto& c : cells) {
    out << spec_key(c.spec) << " reported=" << format_number(c.reported) << " reference=" << format_number(c.reference)
        << " delta=" << format_number(c.delta) << '\n';
  }
  for (const auto& k : missing_in_report) out << "missing in report: " << k << '\n';
  for (const auto& k : missing_in_reference) out << "missing in reference: " << k << '\n';
  return out.str();
}

}  // namespace modrestore
