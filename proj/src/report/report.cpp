#include "report/report.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "common/error.hpp"
#include "json.hpp"
#include "report/models.hpp"

namespace tlb::report {

using bench::RunKey;
using bench::RunRecord;
using nlohmann::ordered_json;

namespace {

constexpr const char* kMissing = "—";

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

bool ok(const RunRecord& r) { return r.status == "ok"; }

std::vector<std::string> cells(const RunRecord* r, std::string_view model) {
  std::vector<std::string> row{std::string(model)};
  if (r == nullptr) {
    row.insert(row.end(), 5, kMissing);
    return row;
  }
  if (!ok(*r)) {
    row.insert(row.end(), 4, kMissing);
    row.push_back("failed after " + bench::format_duration(r->timing.wall_seconds));
    return row;
  }
  row.push_back(fixed2(r->metrics.accuracy));
  row.push_back(fixed2(r->metrics.precision));
  row.push_back(fixed2(r->metrics.recall));
  row.push_back(fixed2(r->metrics.f1));
  row.push_back(bench::format_duration(r->timing.wall_seconds));
  return row;
}

// Validates names and uniqueness; indexed by table position.
std::array<const RunRecord*, kModels.size()> by_model(const std::vector<RunRecord>& records) {
  std::array<const RunRecord*, kModels.size()> slots{};
  for (const RunRecord& r : records) {
    std::size_t i = 0;
    while (i < kModels.size() && kModels[i].display != r.model_name) ++i;
    if (i == kModels.size()) throw Error(Errc::InvalidArgument, "unknown model '" + r.model_name + "'");
    if (slots[i] != nullptr)
      throw Error(Errc::DuplicateModel,
                  r.model_name + " has several records under " + bench::render(r.run_key) +
                      " (" + slots[i]->run_id + ", " + r.run_id + "); select one explicitly");
    slots[i] = &r;
  }
  return slots;
}

}  // namespace

std::optional<Format> parse_format(const std::string& text) {
  if (text == "markdown" || text == "md") return Format::Markdown;
  if (text == "csv") return Format::Csv;
  if (text == "json") return Format::Json;
  return std::nullopt;
}

std::string caption(const RunKey& key) {
  return std::string(key.accelerator_enabled ? "With" : "Without") + " GPU support for Device" +
         std::to_string(key.device_index) + " (" + bench::render(key) + ")";
}

std::string render_table(const std::vector<RunRecord>& records, const TableSpec& spec) {
  for (const RunRecord& r : records)
    if (!(r.run_key == spec.run_key))
      throw Error(Errc::MixedRunKeys, r.run_id + " is " + bench::render(r.run_key) +
                                          ", table is " + bench::render(spec.run_key));
  const auto slots = by_model(records);

  std::vector<std::vector<std::string>> rows;
  if (!records.empty())
    for (std::size_t i = 0; i < kModels.size(); ++i) rows.push_back(cells(slots[i], kModels[i].display));

  std::ostringstream os;
  switch (spec.format) {
    case Format::Markdown: {
      os << "Table: " << caption(spec.run_key) << "\n\n|";
      for (const char* c : kColumns) os << ' ' << c << " |";
      os << "\n|";
      for (std::size_t i = 0; i < kColumns.size(); ++i) os << (i == 0 ? " :--- |" : " ---: |");
      os << '\n';
      for (const auto& row : rows) {
        os << '|';
        for (const auto& c : row) os << ' ' << c << " |";
        os << '\n';
      }
      break;
    }
    case Format::Csv: {
      for (std::size_t i = 0; i < kColumns.size(); ++i) os << (i ? "," : "") << kColumns[i];
      os << '\n';
      for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << '\n';
      }
      break;
    }
    case Format::Json: {
      ordered_json doc;
      doc["caption"] = caption(spec.run_key);
      doc["run_key"] = bench::render(spec.run_key);
      doc["columns"] = kColumns;
      doc["rows"] = ordered_json::array();
      if (!records.empty())
        for (std::size_t i = 0; i < kModels.size(); ++i) {
          const RunRecord* r = slots[i];
          ordered_json row;
          row["Models"] = kModels[i].display;
          const bool have = r != nullptr && ok(*r);
          row["Accuracy"] = have ? ordered_json(r->metrics.accuracy) : ordered_json(nullptr);
          row["precision"] = have ? ordered_json(r->metrics.precision) : ordered_json(nullptr);
          row["Recall"] = have ? ordered_json(r->metrics.recall) : ordered_json(nullptr);
          row["F1 Score"] = have ? ordered_json(r->metrics.f1) : ordered_json(nullptr);
          row["Execution Time"] =
              r ? ordered_json(cells(r, kModels[i].display).back()) : ordered_json(nullptr);
          row["wall_seconds"] = r ? ordered_json(r->timing.wall_seconds) : ordered_json(nullptr);
          row["status"] = r ? ordered_json(r->status) : ordered_json("missing");
          row["run_id"] = r ? ordered_json(r->run_id) : ordered_json(nullptr);
          doc["rows"].push_back(std::move(row));
        }
      os << doc.dump(2) << '\n';
      break;
    }
  }
  return os.str();
}

std::string render_row(const RunRecord& record) {
  std::string out = "|";
  for (const std::string& cell : cells(&record, record.model_name)) out += " " + cell + " |";
  return out;
}

std::vector<RunRecord> latest_per_model(const std::vector<RunRecord>& records) {
  std::vector<RunRecord> out;
  for (const RunRecord& r : records) {
    auto it = std::find_if(out.begin(), out.end(), [&](const RunRecord& o) {
      return o.model_name == r.model_name && o.run_key == r.run_key;
    });
    if (it == out.end())
      out.push_back(r);
    else if (r.created_at >= it->created_at)
      *it = r;
  }
  return out;
}

std::string format_time_delta(double seconds) {
  const auto minutes = static_cast<long long>(std::ceil(std::abs(seconds) / 60.0 - 1e-9));
  if (minutes >= 60)
    return std::to_string(minutes / 60) + "h " + std::to_string(minutes % 60) + "min";
  return std::to_string(minutes) + "min";
}

Comparison compare(const std::vector<RunRecord>& records) {
  // (table position, device) -> [without, with]
  std::map<std::pair<std::size_t, int>, std::array<const RunRecord*, 2>> cellsets;
  for (const RunRecord& r : records) {
    if (!ok(r)) continue;
    std::size_t i = 0;
    while (i < kModels.size() && kModels[i].display != r.model_name) ++i;
    if (i == kModels.size()) throw Error(Errc::InvalidArgument, "unknown model '" + r.model_name + "'");
    auto& slot = cellsets[{i, r.run_key.device_index}][r.run_key.accelerator_enabled ? 1 : 0];
    if (slot != nullptr)
      throw Error(Errc::DuplicateModel, r.model_name + " has several records under " +
                                            bench::render(r.run_key) + "; select one explicitly");
    slot = &r;
  }
  Comparison c;
  for (const auto& [key, pair] : cellsets) {
    const auto& [model, device] = key;
    const std::string name(kModels[model].display);
    if (pair[0] && pair[1]) {
      c.pairs.push_back({name, device, *pair[0], *pair[1]});
    } else {
      const RunKey present{device, pair[1] != nullptr};
      c.unpaired.push_back(name + " (" + bench::render(present) + " only)");
    }
  }
  return c;
}

std::string render_unpaired(const Comparison& comparison) {
  std::ostringstream os;
  os << "Unpaired (" << comparison.unpaired.size() << "):\n";
  for (const std::string& u : comparison.unpaired) os << "- " << u << '\n';
  return os.str();
}

std::string render_comparison(const std::vector<RunRecord>& records) {
  const Comparison c = compare(records);
  if (c.pairs.empty())
    throw Error(Errc::NoComparablePairs,
                "no model has both an accelerated and a CPU-only run on the same device");
  std::ostringstream os;
  os << "Comparison: accelerator on (D_i) vs off (D_i')\n\n"
     << "| Models | Device | Time off | Time on | Δ time | Speedup | Accuracy off | Accuracy on "
        "| Δ accuracy |\n"
     << "| :--- | :--- | ---: | ---: | :--- | ---: | ---: | ---: | ---: |\n";
  int faster = 0;
  for (const ComparisonRow& row : c.pairs) {
    const double off = row.without.timing.wall_seconds;
    const double on = row.with.timing.wall_seconds;
    const double saved = off - on;
    if (on < off) ++faster;
    std::string delta = "Δ = " + format_time_delta(saved);
    if (saved > 0)
      delta += " less";
    else if (saved < 0)
      delta += " more";
    char ratio[32];
    std::snprintf(ratio, sizeof ratio, "%.2f×", bench::speedup(off, on));
    const double dacc = row.with.metrics.accuracy - row.without.metrics.accuracy;
    char dacc_text[32];
    std::snprintf(dacc_text, sizeof dacc_text, "%+.2f", dacc);
    os << "| " << row.model << " | Device" << row.device_index << " | "
       << bench::format_duration(off) << " | " << bench::format_duration(on) << " | " << delta
       << " | " << ratio << " | " << fixed2(row.without.metrics.accuracy) << " | "
       << fixed2(row.with.metrics.accuracy) << " | " << dacc_text << " |\n";
  }
  os << "\nAccelerated run faster for " << faster << " of " << c.pairs.size()
     << " paired models.\n";
  if (!c.unpaired.empty()) os << '\n' << render_unpaired(c);
  return os.str();
}

}  // namespace tlb::report
