// SPDX-License-Identifier: Apache-2.0
#include "est/loss_log.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "est/config.hpp"
#include "est/errors.hpp"

EST_NAMESPACE_BEGIN

namespace {

template <class T>
T parse_field(std::string_view s, const std::string& where) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError(where + "malformed field '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

void LossLog::append(const LossRecord& record) {
  if (!records_.empty()) {
    if (record.step <= records_.back().step) {
      throw StateError("loss log steps must strictly increase (" + std::to_string(record.step) + " after " +
                       std::to_string(records_.back().step) + ")");
    }
    if (record.cum_flops < records_.back().cum_flops) throw StateError("cumulative FLOPs must not decrease");
  }
  records_.push_back(record);
}

const LossRecord* LossLog::find(std::int64_t step) const {
  auto it = std::lower_bound(records_.begin(), records_.end(), step,
                             [](const LossRecord& r, std::int64_t s) { return r.step < s; });
  return it != records_.end() && it->step == step ? &*it : nullptr;
}

void LossLog::write_csv(std::ostream& out) const {
  out << kLossLogHeader << '\n';
  for (const auto& r : records_) {
    out << r.step << ',' << r.stage << ',' << format_double(r.loss) << ',' << format_double(r.lr) << ','
        << format_double(r.cum_flops) << '\n';
  }
}

void LossLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_csv(out);
}

LossLog LossLog::read_csv(std::istream& in, std::string_view origin) {
  std::string line;
  if (!std::getline(in, line) || line != kLossLogHeader) {
    throw IoError(std::string(origin) + ": expected header '" + kLossLogHeader + "'");
  }
  LossLog log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
    auto f = split_csv(line);
    if (f.size() != 5) throw IoError(where + "expected 5 fields");
    LossRecord r{parse_field<std::int64_t>(f[0], where), parse_field<std::size_t>(f[1], where),
                 parse_field<double>(f[2], where), parse_field<double>(f[3], where), parse_field<double>(f[4], where)};
    try {
      log.append(r);
    } catch (const StateError& e) {
      throw IoError(where + e.what());
    }
  }
  return log;
}

LossLog LossLog::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read loss log '" + path.string() + "'");
  return read_csv(in, path.string());
}

void write_eval_csv(std::span<const EvalRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "step,eval_loss\n";
  for (const auto& r : records) out << r.step << ',' << format_double(r.loss) << '\n';
}

std::vector<EvalRecord> read_eval_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "step,eval_loss") throw IoError(path.string() + ": bad header");
  std::vector<EvalRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    const std::string where = path.string() + ": ";
    if (f.size() != 2) throw IoError(where + "expected 2 fields");
    out.push_back({parse_field<std::int64_t>(f[0], where), parse_field<double>(f[1], where)});
  }
  return out;
}

EST_NAMESPACE_END
