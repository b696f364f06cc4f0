#pragma once

#include <chrono>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "metrics/metrics.hpp"

namespace tlb::bench {

// Environment variable that forces the accelerator off (same as --no-accelerator).
inline constexpr const char* kNoAcceleratorEnv = "TLBENCH_NO_ACCELERATOR";

struct DeviceProfile {
  std::string device_label;
  std::string cpu_model = "unknown";
  double ram_gb = 0.0;
  std::optional<std::string> gpu_model;
  bool accelerator_enabled = false;
  // Backend that actually executes the numeric kernels.
  std::string compute_backend = "cpu";
};

// Best-effort discovery from /proc and nvidia-smi. `disable_accelerator`
// mirrors --no-accelerator; the environment override is honored as well.
DeviceProfile detect_device(int device_index, bool disable_accelerator);

struct RunKey {
  int device_index = 1;
  bool accelerator_enabled = false;

  bool operator==(const RunKey&) const = default;
};

// (1, true) -> "D_1", (1, false) -> "D_1'".
std::string render(const RunKey& key);
std::optional<RunKey> parse_run_key(const std::string& text);

struct TimingRecord {
  double wall_seconds = 0.0;
  std::string clock_source = "steady_clock";
  std::chrono::system_clock::time_point started_at;
  std::chrono::system_clock::time_point ended_at;
  bool failed = false;
};

// Process-wide lock serializing timed workloads. Recursive so a timed
// pipeline may time its own stages.
std::recursive_mutex& run_lock();

template <class R>
struct Timed {
  std::optional<R> result;
  TimingRecord timing;
  std::exception_ptr error;

  R& value() {
    if (error) std::rethrow_exception(error);
    return *result;
  }
};

template <>
struct Timed<void> {
  TimingRecord timing;
  std::exception_ptr error;

  void value() const {
    if (error) std::rethrow_exception(error);
  }
};

namespace detail {
double elapsed_seconds(std::chrono::steady_clock::time_point t0,
                       std::chrono::steady_clock::time_point t1);
}

// Runs `work` under the run lock and measures it with the monotonic clock. A
// throwing workload still yields a timing record, marked failed; the
// exception is kept for value() to rethrow.
template <class F>
auto time_run(F&& work) -> Timed<std::invoke_result_t<F&>> {
  using R = std::invoke_result_t<F&>;
  std::lock_guard<std::recursive_mutex> hold(run_lock());
  Timed<R> out;
  const auto wall0 = std::chrono::system_clock::now();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<R>)
      work();
    else
      out.result.emplace(work());
  } catch (...) {
    out.error = std::current_exception();
    out.timing.failed = true;
  }
  const auto t1 = std::chrono::steady_clock::now();
  out.timing.wall_seconds = detail::elapsed_seconds(t0, t1);
  out.timing.started_at = wall0;
  // derived from the monotonic span so the two timestamps always agree with it
  out.timing.ended_at =
      wall0 + std::chrono::duration_cast<std::chrono::system_clock::duration>(t1 - t0);
  if (out.timing.ended_at <= out.timing.started_at)
    out.timing.ended_at = out.timing.started_at + std::chrono::system_clock::duration(1);
  return out;
}

// "5h 27min" at or above an hour (minutes rounded half-up), else "33min 42s".
std::string format_duration(double seconds);

// Inverse for published-style strings; accepts "33 min 42s" and "1hr 3min".
std::optional<double> parse_duration(const std::string& text);

// Canonical spelling of a published-style duration: no inner spaces, "hr" -> "h".
std::string canonical_duration(const std::string& text);

// cpu / accelerated wall time.
double speedup(const TimingRecord& cpu, const TimingRecord& accelerated);
double speedup(double cpu_seconds, double accelerated_seconds);

struct RunRecord {
  std::string run_id;
  std::string model_name;
  RunKey run_key;
  DeviceProfile device;
  metrics::MetricsReport metrics;
  TimingRecord timing;
  std::string config_hash;
  std::string created_at;
  std::string status = "ok";  // "ok" or "failed"
  std::string error;          // failure message when status == "failed"
};

std::string iso8601(std::chrono::system_clock::time_point t);
std::chrono::system_clock::time_point parse_iso8601(const std::string& text);

// Unique id: UTC timestamp, model token and a random suffix.
std::string new_run_id(const std::string& model_token);

std::string to_json_line(const RunRecord& record);
RunRecord from_json_line(const std::string& line);

struct RunFilter {
  std::optional<std::string> model_name;
  std::optional<RunKey> run_key;
  std::optional<std::string> created_from;  // ISO date or timestamp prefix, inclusive
  std::optional<std::string> created_to;    // inclusive on the prefix
};

// Append-only JSON-lines store.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path path) : path_(std::move(path)) {}

  void append(const RunRecord& record) const;
  // Records in append order; a malformed line raises StoreCorrupt naming it.
  std::vector<RunRecord> load(const RunFilter& filter = {}) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace tlb::bench
