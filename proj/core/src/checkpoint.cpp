// SPDX-License-Identifier: Apache-2.0
#include "est/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <type_traits>

#include "est/errors.hpp"

EST_NAMESPACE_BEGIN

namespace {

constexpr const char* kFormat = "est-checkpoint-1";

class ByteWriter {
 public:
  explicit ByteWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write '" + path.string() + "'");
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void real(Real v) {
    using Bits = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
    const auto bits = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(Real); ++i) out_.put(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  void reals(std::span<const Real> vs) {
    for (Real v : vs) real(v);
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("failed writing '" + path_.string() + "'");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class ByteReader {
 public:
  ByteReader(const std::filesystem::path& path, std::size_t real_size) : path_(path), real_size_(real_size) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  std::uint64_t u64() { return raw(8); }
  Real real() {
    const std::uint64_t bits = raw(real_size_);
    if (real_size_ == 4) return static_cast<Real>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
    return static_cast<Real>(std::bit_cast<double>(bits));
  }
  void reals(std::span<Real> vs) {
    for (Real& v : vs) v = real();
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw IoError("'" + path_.string() + "' has trailing bytes");
  }

 private:
  std::uint64_t raw(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("'" + path_.string() + "' is truncated");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }

  std::filesystem::path path_;
  std::size_t real_size_;
  std::string bytes_;
  std::size_t pos_ = 0;
};

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::vector<std::pair<std::string, std::string>> manifest = {
      {"format", kFormat},
      {"precision", kPrecisionName},
      {"config_hash", config_hash(ck.config)},
      {"step", std::to_string(ck.step)},
      {"parameters", std::to_string(ck.params.parameter_count())},
      {"rng.algorithm", kRngAlgorithm},
      {"rng.sampler.seed", std::to_string(ck.sampler.seed)},
      {"rng.sampler.stream", std::to_string(ck.sampler.stream_id)},
      {"rng.sampler.next_step", std::to_string(ck.sampler.next_step)},
      {"rng.data.seed", std::to_string(ck.data.seed)},
      {"rng.data.stream", std::to_string(ck.data.stream_id)},
      {"rng.data.next_step", std::to_string(ck.data.next_step)},
  };
  write_text(dir / "config", serialize_config(ck.config));

  ByteWriter params(dir / "params.bin");
  for (const Tensor* t : ck.params.tensors()) params.reals(t->data());
  params.finish();

  ByteWriter opt(dir / "optimizer.bin");
  for (const auto& slot : ck.optimizer) {
    opt.u64(static_cast<std::uint64_t>(slot.steps));
    opt.reals(slot.m);
    opt.reals(slot.v);
  }
  opt.finish();

  ck.log.write_csv(dir / "loss_log.csv");
  write_eval_csv(ck.evals, dir / "eval_log.csv");
  // Written last so a directory with a manifest is complete.
  write_text(dir / "manifest", format_key_values(manifest));
}

Checkpoint read_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint '" + dir.string() + "' is not a directory");
  std::map<std::string, std::string> kv;
  try {
    for (auto& e : parse_key_values(read_text(dir / "manifest"), (dir / "manifest").string())) kv[e.key] = e.value;
  } catch (const ConfigError& e) {
    throw IoError(e.what());
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("checkpoint manifest lacks '" + key + "'");
    return it->second;
  };
  auto get_u64 = [&](const std::string& key) {
    try {
      return static_cast<std::uint64_t>(std::stoull(get(key)));
    } catch (const std::logic_error&) {
      throw IoError("checkpoint manifest: bad value for '" + key + "'");
    }
  };
  if (get("format") != kFormat) throw IoError("unsupported checkpoint format '" + get("format") + "'");
  const std::string& precision = get("precision");
  std::size_t real_size = 0;
  if (precision == "fp32") {
    real_size = 4;
  } else if (precision == "fp64") {
    real_size = 8;
  } else {
    throw IoError("unknown checkpoint precision '" + precision + "'");
  }
  if (get("rng.algorithm") != kRngAlgorithm) throw IoError("checkpoint uses RNG '" + get("rng.algorithm") + "'");

  Checkpoint ck;
  try {
    ck.config = parse_config(read_text(dir / "config"), (dir / "config").string());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint config: ") + e.what());
  }
  if (config_hash(ck.config) != get("config_hash")) throw IoError("checkpoint config does not match its manifest hash");
  ck.step = static_cast<std::int64_t>(get_u64("step"));
  ck.sampler = {get_u64("rng.sampler.seed"), get_u64("rng.sampler.stream"),
                static_cast<std::int64_t>(get_u64("rng.sampler.next_step"))};
  ck.data = {get_u64("rng.data.seed"), get_u64("rng.data.stream"),
             static_cast<std::int64_t>(get_u64("rng.data.next_step"))};

  ck.params = ModelParams::initialize(ck.config.model, ck.config.seed.seed);
  if (get_u64("parameters") != ck.params.parameter_count()) throw IoError("checkpoint parameter count mismatch");
  ByteReader params(dir / "params.bin", real_size);
  for (auto& p : ck.params.named()) params.reals(p.tensor->data());
  params.expect_end();

  ByteReader opt(dir / "optimizer.bin", real_size);
  for (auto& p : ck.params.named()) {
    AdamW::Slot slot;
    slot.steps = static_cast<std::int64_t>(opt.u64());
    slot.m.resize(p.tensor->size());
    slot.v.resize(p.tensor->size());
    opt.reals(slot.m);
    opt.reals(slot.v);
    ck.optimizer.push_back(std::move(slot));
  }
  opt.expect_end();

  ck.log = LossLog::read_csv(dir / "loss_log.csv");
  ck.evals = read_eval_csv(dir / "eval_log.csv");
  return ck;
}

EST_NAMESPACE_END
