#include "bench/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <regex>
#include <sstream>

#include "json.hpp"

#include "common/error.hpp"

namespace tlb::bench {

using nlohmann::json;

namespace {

// The numeric kernels run on the CPU only; a detected GPU is recorded but
// cannot be enabled.
constexpr bool kAcceleratorBackendAvailable = false;

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line))
    if (line.starts_with("model name")) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) return trim(line.substr(colon + 1));
    }
  return "unknown";
}

double ram_gb() {
  std::ifstream in("/proc/meminfo");
  std::string key;
  double kb = 0.0;
  std::string unit;
  while (in >> key >> kb >> unit)
    if (key == "MemTotal:") return kb / (1024.0 * 1024.0);
  return 0.0;
}

std::optional<std::string> gpu_model() {
  std::error_code ec;
  const std::filesystem::path proc_gpus = "/proc/driver/nvidia/gpus";
  if (std::filesystem::is_directory(proc_gpus, ec)) {
    for (const auto& entry : std::filesystem::directory_iterator(proc_gpus, ec)) {
      std::ifstream in(entry.path() / "information");
      std::string line;
      while (std::getline(in, line))
        if (line.starts_with("Model:")) return trim(line.substr(6));
    }
  }
  if (FILE* pipe = popen("nvidia-smi --query-gpu=name --format=csv,noheader 2>/dev/null", "r")) {
    char buf[256];
    std::string out;
    while (std::fgets(buf, sizeof buf, pipe)) out += buf;
    const int status = pclose(pipe);
    out = trim(out.substr(0, out.find('\n')));
    if (status == 0 && !out.empty()) return out;
  }
  return std::nullopt;
}

bool env_disables_accelerator() {
  const char* v = std::getenv(kNoAcceleratorEnv);
  if (v == nullptr) return false;
  const std::string s(v);
  return !(s.empty() || s == "0" || s == "false" || s == "no");
}

}  // namespace

DeviceProfile detect_device(int device_index, bool disable_accelerator) {
  DeviceProfile p;
  p.device_label = "Device" + std::to_string(device_index);
  p.cpu_model = cpu_model();
  p.ram_gb = ram_gb();
  p.gpu_model = gpu_model();
  const bool disabled = disable_accelerator || env_disables_accelerator();
  p.accelerator_enabled = p.gpu_model.has_value() && !disabled && kAcceleratorBackendAvailable;
  p.compute_backend = p.accelerator_enabled ? "gpu" : "cpu";
  return p;
}

std::string render(const RunKey& key) {
  return "D_" + std::to_string(key.device_index) + (key.accelerator_enabled ? "" : "'");
}

std::optional<RunKey> parse_run_key(const std::string& text) {
  static const std::regex re(R"(D_([1-9][0-9]*)('?))");
  std::smatch m;
  if (!std::regex_match(text, m, re)) return std::nullopt;
  return RunKey{std::stoi(m[1].str()), m[2].length() == 0};
}

std::recursive_mutex& run_lock() {
  static std::recursive_mutex lock;
  return lock;
}

namespace detail {
double elapsed_seconds(std::chrono::steady_clock::time_point t0,
                       std::chrono::steady_clock::time_point t1) {
  auto d = t1 - t0;
  // two reads of the clock never report a zero span
  if (d <= std::chrono::steady_clock::duration::zero()) d = std::chrono::steady_clock::duration(1);
  return std::chrono::duration<double>(d).count();
}
}  // namespace detail

std::string format_duration(double seconds) {
  if (std::isnan(seconds) || std::isinf(seconds))
    throw Error(Errc::InvalidArgument, "duration is not finite");
  if (seconds < 0) throw Error(Errc::NegativeDuration, std::to_string(seconds) + " s");
  if (seconds >= 3600.0) {
    auto hours = static_cast<long long>(std::floor(seconds / 3600.0));
    auto minutes = static_cast<long long>(std::floor((seconds - 3600.0 * hours) / 60.0 + 0.5));
    if (minutes == 60) {
      ++hours;
      minutes = 0;
    }
    return std::to_string(hours) + "h " + std::to_string(minutes) + "min";
  }
  auto minutes = static_cast<long long>(std::floor(seconds / 60.0));
  auto secs = static_cast<long long>(std::floor(seconds - 60.0 * minutes + 0.5));
  if (secs == 60) {
    ++minutes;
    secs = 0;
  }
  if (minutes == 60) return "1h 0min";
  return std::to_string(minutes) + "min " + std::to_string(secs) + "s";
}

std::string canonical_duration(const std::string& text) {
  std::string compact;
  for (char ch : text)
    if (!std::isspace(static_cast<unsigned char>(ch))) compact += ch;
  static const std::regex hr("hr");
  static const std::regex unit_boundary("(h|min)(?=[0-9])");
  return std::regex_replace(std::regex_replace(compact, hr, "h"), unit_boundary, "$1 ");
}

std::optional<double> parse_duration(const std::string& text) {
  static const std::regex re(R"(^(?:([0-9]+)h)?(?:([0-9]+)min)?(?:([0-9]+)s)?$)");
  std::string compact;
  for (char ch : canonical_duration(text))
    if (ch != ' ') compact += ch;
  std::smatch m;
  if (compact.empty() || !std::regex_match(compact, m, re)) return std::nullopt;
  double total = 0.0;
  if (m[1].matched) total += 3600.0 * std::stod(m[1].str());
  if (m[2].matched) total += 60.0 * std::stod(m[2].str());
  if (m[3].matched) total += std::stod(m[3].str());
  return total;
}

double speedup(double cpu_seconds, double accelerated_seconds) {
  if (!(cpu_seconds > 0.0) || !(accelerated_seconds > 0.0))
    throw Error(Errc::ZeroDuration, "speedup needs two positive durations");
  return cpu_seconds / accelerated_seconds;
}

double speedup(const TimingRecord& cpu, const TimingRecord& accelerated) {
  return speedup(cpu.wall_seconds, accelerated.wall_seconds);
}

std::string iso8601(std::chrono::system_clock::time_point t) {
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(t.time_since_epoch());
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(us);
  auto frac = us - secs;
  if (frac.count() < 0) {
    secs -= std::chrono::seconds(1);
    frac += std::chrono::seconds(1);
  }
  const std::time_t tt = secs.count();
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(6) << std::setfill('0')
     << frac.count() << 'Z';
  return os.str();
}

std::chrono::system_clock::time_point parse_iso8601(const std::string& text) {
  std::tm tm{};
  std::istringstream is(text);
  is >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%S");
  if (is.fail()) throw Error(Errc::InvalidArgument, "bad timestamp '" + text + "'");
  long long micros = 0;
  if (is.peek() == '.') {
    is.get();
    std::string digits;
    while (std::isdigit(is.peek())) digits += static_cast<char>(is.get());
    digits = (digits + "000000").substr(0, 6);
    micros = std::stoll(digits);
  }
  const std::time_t tt = timegm(&tm);
  return std::chrono::system_clock::from_time_t(tt) + std::chrono::microseconds(micros);
}

std::string new_run_id(const std::string& model_token) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  static std::mt19937_64 gen{std::random_device{}()};
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%S") << '-' << model_token << '-' << std::hex
     << std::setw(8) << std::setfill('0') << (gen() & 0xffffffffULL);
  return os.str();
}

namespace {

json device_json(const DeviceProfile& d) {
  json j = {{"device_label", d.device_label},
            {"cpu_model", d.cpu_model},
            {"ram_gb", d.ram_gb},
            {"gpu_model", d.gpu_model ? json(*d.gpu_model) : json(nullptr)},
            {"accelerator_enabled", d.accelerator_enabled},
            {"compute_backend", d.compute_backend}};
  return j;
}

DeviceProfile device_from(const json& j) {
  DeviceProfile d;
  d.device_label = j.at("device_label").get<std::string>();
  d.cpu_model = j.at("cpu_model").get<std::string>();
  d.ram_gb = j.at("ram_gb").get<double>();
  if (!j.at("gpu_model").is_null()) d.gpu_model = j.at("gpu_model").get<std::string>();
  d.accelerator_enabled = j.at("accelerator_enabled").get<bool>();
  d.compute_backend = j.value("compute_backend", "cpu");
  return d;
}

}  // namespace

std::string to_json_line(const RunRecord& r) {
  json j = {
      {"run_id", r.run_id},
      {"model_name", r.model_name},
      {"run_key", render(r.run_key)},
      {"device", device_json(r.device)},
      {"metrics",
       {{"accuracy", r.metrics.accuracy},
        {"precision", r.metrics.precision},
        {"recall", r.metrics.recall},
        {"f1", r.metrics.f1},
        {"zero_division_flags", r.metrics.zero_division_flags}}},
      {"timing",
       {{"wall_seconds", r.timing.wall_seconds},
        {"clock_source", r.timing.clock_source},
        {"started_at", iso8601(r.timing.started_at)},
        {"ended_at", iso8601(r.timing.ended_at)},
        {"failed", r.timing.failed}}},
      {"config_hash", r.config_hash},
      {"created_at", r.created_at},
      {"status", r.status},
      {"error", r.error},
  };
  // 17 significant digits round-trip every double
  return j.dump();
}

RunRecord from_json_line(const std::string& line) {
  const json j = json::parse(line);
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.model_name = j.at("model_name").get<std::string>();
  const auto key = parse_run_key(j.at("run_key").get<std::string>());
  if (!key) throw Error(Errc::InvalidArgument, "bad run_key");
  r.run_key = *key;
  r.device = device_from(j.at("device"));
  const json& m = j.at("metrics");
  r.metrics.accuracy = m.at("accuracy").get<double>();
  r.metrics.precision = m.at("precision").get<double>();
  r.metrics.recall = m.at("recall").get<double>();
  r.metrics.f1 = m.at("f1").get<double>();
  r.metrics.zero_division_flags = m.at("zero_division_flags").get<std::set<std::string>>();
  const json& t = j.at("timing");
  r.timing.wall_seconds = t.at("wall_seconds").get<double>();
  r.timing.clock_source = t.at("clock_source").get<std::string>();
  r.timing.started_at = parse_iso8601(t.at("started_at").get<std::string>());
  r.timing.ended_at = parse_iso8601(t.at("ended_at").get<std::string>());
  r.timing.failed = t.at("failed").get<bool>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.created_at = j.at("created_at").get<std::string>();
  r.status = j.value("status", "ok");
  r.error = j.value("error", "");
  return r;
}

void RunStore::append(const RunRecord& record) const {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  const std::string line = to_json_line(record) + "\n";
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot open run store " + path_.string());
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.flush();
  if (!out) throw Error(Errc::Io, "write to run store " + path_.string() + " failed");
}

std::vector<RunRecord> RunStore::load(const RunFilter& filter) const {
  std::vector<RunRecord> out;
  std::ifstream in(path_);
  if (!in) return out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    RunRecord r;
    try {
      r = from_json_line(line);
    } catch (const std::exception& e) {
      throw Error(Errc::StoreCorrupt,
                  path_.string() + " line " + std::to_string(number) + ": " + e.what());
    }
    if (filter.model_name && r.model_name != *filter.model_name) continue;
    if (filter.run_key && !(r.run_key == *filter.run_key)) continue;
    if (filter.created_from && r.created_at.substr(0, filter.created_from->size()) < *filter.created_from)
      continue;
    if (filter.created_to && r.created_at.substr(0, filter.created_to->size()) > *filter.created_to)
      continue;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace tlb::bench
