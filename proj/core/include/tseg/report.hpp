#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tseg {

// One (experiment, source, attack, target, seed) cell.
struct TransferRecord {
  std::string experiment = "transfer";
  std::string source;
  std::string attack;
  std::uint64_t config_hash = 0;
  std::string target;
  std::uint64_t seed = 0;
  double clean_miou = 0.0;
  double adv_miou = 0.0;  // NaN when the cell failed
  double max_linf = 0.0;  // largest ||x_adv - x||_inf over all iterations and samples
  bool in_range = true;   // every iterate stayed inside [0, 1]
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
  friend bool operator==(const TransferRecord& a, const TransferRecord& b);
};

// Per-iteration averages over the eval samples of one (attack, seed) cell.
struct TraceRecord {
  std::string attack;
  std::uint64_t seed = 0;
  int iteration = 0;
  double mean_loss = 0.0;
  double stage2_fraction = 0.0;
  double misclassified_fraction = 0.0;
  double mean_kl = 0.0;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct TransferReport {
  std::string dataset_id;
  std::string created;
  int eval_samples = 0;
  std::vector<TransferRecord> records;
  std::vector<TraceRecord> traces;

  // Attack and target names in first-appearance order.
  std::vector<std::string> attacks() const;
  std::vector<std::string> targets() const;
  std::vector<std::uint64_t> seeds() const;

  // Median over seeds of the adversarial mIoU of successful cells.
  std::optional<double> median_adv_miou(const std::string& attack, const std::string& target) const;
  std::optional<double> clean_miou(const std::string& target) const;
  std::vector<double> adv_values(const std::string& attack, const std::string& target) const;

  // Appends another report's records and traces.
  void merge(const TransferReport& other);

  friend bool operator==(const TransferReport&, const TransferReport&) = default;
};

double median(std::vector<double> values);

// Line-oriented text: a "tseg-report 1" line, one "meta" line, then one
// "record" or "trace" line each, as space-separated key=value fields.
// Values containing spaces, quotes, '=' or backslashes are double-quoted
// with backslash escapes. Doubles are written with 17 significant digits.
std::string report_to_text(const TransferReport& report);
TransferReport parse_report(const std::string& text);
void write_report(const std::filesystem::path& path, const TransferReport& report);
// Throws IoError, or ParseError naming the line and record.
TransferReport read_report(const std::filesystem::path& path);

// Columns: source,attack,target,seed,clean_miou,adv_miou,status.
std::string report_to_csv(const TransferReport& report);
void write_csv(const std::filesystem::path& path, const TransferReport& report);

}  // namespace tseg
