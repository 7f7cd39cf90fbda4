#pragma once

#include <cstdint>
#include <filesystem>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "modrestore/degradation.hpp"
#include "modrestore/image_io.hpp"
#include "modrestore/model.hpp"
#include "modrestore/serialization.hpp"

namespace modrestore {

/// 10 log10(peak^2 / MSE); identical inputs give +infinity.
template <typename Scalar>
double psnr(const FeatureMap<Scalar>& pred, const FeatureMap<Scalar>& ref, double peak = 1.0) {
  require_same_shape(pred, ref, "psnr");
  if (pred.empty()) throw ShapeError("psnr of empty images");
  if (!(peak > 0.0)) throw ConfigError("psnr peak must be positive");
  const double mse = (pred.data.template cast<double>() - ref.data.template cast<double>()).squaredNorm() /
                     static_cast<double>(pred.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

enum class Polarity { HigherIsBetter, LowerIsBetter };

std::string to_string(Polarity p);

/// A scalar image-quality score. Must be deterministic.
struct MetricPlugin {
  std::string name;
  Polarity polarity = Polarity::HigherIsBetter;
  std::function<double(const Image& pred, const Image& ref)> score;
};

MetricPlugin psnr_metric();

/// Runs `<executable> <pred.png> <ref.png>` and parses the first number it
/// prints. LPIPS and DISTS scorers live behind this boundary.
MetricPlugin external_metric(const std::filesystem::path& executable, std::string name, Polarity polarity);

/// "psnr" or "plugin:<path>[:lower|:higher]" (plugins default to lower is
/// better); a comma-separated list for parse_metrics.
MetricPlugin parse_metric(std::string_view token);
std::vector<MetricPlugin> parse_metrics(std::string_view list);

/// "blur2_sigma30"
std::string spec_key(const DegradationSpec& spec);

/// FNV-1a over "<image>|<spec key>".
std::uint64_t degradation_seed(std::string_view image, const DegradationSpec& spec);

struct EvalGrid {
  std::vector<DegradationSpec> specs;

  void validate() const;
  /// Single- and two-degradation columns of the published LPIPS/DISTS and
  /// PSNR tables.
  static EvalGrid defaults();
};

void to_json(Json& j, const EvalGrid& g);
/// Accepts {"specs": [...]} or a bare array of {"blur", "sigma"}.
void from_json(const Json& j, EvalGrid& g);
EvalGrid load_grid(const std::filesystem::path& path);

/// Fixed-level baselines: one per spec key, or one shared by every spec.
struct BaselineSet {
  std::optional<RestorationModel> shared;
  std::map<std::string, RestorationModel> per_spec;

  bool empty() const noexcept { return !shared && per_spec.empty(); }
  const RestorationModel* find(const DegradationSpec& spec) const;
};

/// A directory holding generator.mrck is a shared baseline; otherwise every
/// subdirectory named by spec_key is a per-spec baseline.
BaselineSet load_baselines(const std::filesystem::path& dir);

struct EvalOptions {
  /// Convert to a single luminance channel before scoring.
  bool grayscale = false;
  /// 0: hardware concurrency.
  int threads = 0;
  /// Mixed into every degradation seed; 0 keeps the plain hash.
  std::uint64_t seed = 0;
};

struct EvalRow {
  std::string image;  // "mean" on aggregate rows
  DegradationSpec spec;
  std::vector<double> model;     // one per metric
  std::vector<double> baseline;  // empty when no baseline covers the spec
};

struct EvalReport {
  std::vector<std::string> metric_names;
  std::vector<Polarity> polarities;
  std::vector<EvalRow> rows;        // grid order, then image name
  std::vector<EvalRow> aggregates;  // one per spec, means over images
  std::vector<std::string> warnings;

  /// How much worse the model scores than the baseline: model - baseline for
  /// lower-is-better metrics, baseline - model otherwise. Equal scores
  /// (including two infinities) give exactly 0.
  std::optional<double> distance(const EvalRow& row, std::size_t metric) const;

  std::string to_csv() const;
  Json to_json() const;
};

/// degrade (seeded per image and spec) -> encode z -> restore -> score, for
/// the model and, where available, the baseline.
EvalReport evaluate_grid(const RestorationModel& model, const BaselineSet& baselines,
                         const std::vector<NamedImage>& images, const EvalGrid& grid,
                         const std::vector<MetricPlugin>& metrics, const EvalOptions& opts = {});

enum class ReportColumn { Model, Baseline, Distance };

/// Published per-spec numbers for one metric and one report column.
struct ReferenceTable {
  std::string name;
  std::string metric;
  ReportColumn column = ReportColumn::Model;
  std::vector<std::pair<DegradationSpec, double>> cells;
};

/// table1.{lpips,dists}.{ugan,cugan,distance}, table2.psnr.{unet,cunet,distance}.
const std::vector<ReferenceTable>& published_tables();
const ReferenceTable& published_table(std::string_view name);

/// Aggregate values of `report` in the shape of a reference table.
ReferenceTable reference_from_report(const EvalReport& report, const std::string& metric, ReportColumn column,
                                     std::string name = "report");

struct CellDelta {
  DegradationSpec spec;
  double reported = 0.0;
  double reference = 0.0;
  double delta = 0.0;  // reported - reference, 0 when equal
};

struct CompareSummary {
  std::string table;
  std::vector<CellDelta> cells;
  std::vector<std::string> missing_in_report;
  std::vector<std::string> missing_in_reference;

  std::string to_text() const;
};

CompareSummary table_compare(const EvalReport& report, const ReferenceTable& reference);

}  // namespace modrestore
