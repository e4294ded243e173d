#pragma once

// Binary checkpoint container.
//
//   offset 0   "CLMR"                    magic
//   offset 4   0x01                      version
//   offset 5   u32 little-endian         metadata length in bytes
//   offset 9   UTF-8 JSON metadata       {config, vocabulary, best_val_perplexity,
//                                         epoch_of_best, shapes}
//   then       float64 little-endian     parameter arrays, row-major, in the order
//                                         layer 1..L (W, U, b), W_out, b_out

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "clmr/corpus.hpp"
#include "clmr/error.hpp"
#include "clmr/lm.hpp"

namespace clmr {

inline constexpr char kCheckpointMagic[4] = {'C', 'L', 'M', 'R'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const LmConfig& c) {
  return {{"vocab_size", c.vocab_size},   {"hidden_size", c.hidden_size},
          {"num_layers", c.num_layers},   {"dropout", c.dropout},
          {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"clip", c.clip},               {"max_seq_len", c.max_seq_len},
          {"max_epochs", c.max_epochs},   {"seed", c.seed},
          {"epoch_mode", to_string(c.epoch_mode)}, {"clip_mode", to_string(c.clip_mode)},
          {"eval_every", c.eval_every}};
}

/// Reads the LM keys present in j onto `base`. Keys outside the LM schema are
/// ignored here; callers that need strictness check them first.
inline LmConfig config_from_json(const nlohmann::json& j, LmConfig base = {}) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  try {
    get("vocab_size", base.vocab_size);
    get("hidden_size", base.hidden_size);
    get("num_layers", base.num_layers);
    get("dropout", base.dropout);
    get("learning_rate", base.learning_rate);
    get("batch_size", base.batch_size);
    get("clip", base.clip);
    get("max_seq_len", base.max_seq_len);
    get("max_epochs", base.max_epochs);
    get("seed", base.seed);
    get("eval_every", base.eval_every);
    if (j.contains("epoch_mode")) {
      const auto m = j.at("epoch_mode").get<std::string>();
      if (m == "steps") base.epoch_mode = EpochMode::steps;
      else if (m == "passes") base.epoch_mode = EpochMode::passes;
      else throw UsageError("epoch_mode must be \"steps\" or \"passes\"");
    }
    if (j.contains("clip_mode")) {
      const auto m = j.at("clip_mode").get<std::string>();
      if (m == "norm") base.clip_mode = ClipMode::norm;
      else if (m == "value") base.clip_mode = ClipMode::value;
      else throw UsageError("clip_mode must be \"norm\" or \"value\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad LM config value: ") + e.what());
  }
  return base;
}

inline const std::vector<std::string>& lm_config_keys() {
  static const std::vector<std::string> keys = {
      "vocab_size", "hidden_size", "num_layers", "dropout",    "learning_rate",
      "batch_size", "clip",        "max_seq_len", "max_epochs", "seed",
      "epoch_mode", "clip_mode",   "eval_every"};
  return keys;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const std::string& buf, std::size_t pos, int bytes) {
  std::uint64_t x = 0;
  for (int i = 0; i < bytes; ++i)
    x |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)]))
         << (8 * i);
  return x;
}

}  // namespace detail

inline std::string serialize_checkpoint(const LmCheckpoint& ck) {
  nlohmann::json meta;
  meta["config"] = config_to_json(ck.config);
  std::vector<std::uint32_t> cps(ck.vocab.chars().begin(), ck.vocab.chars().end());
  meta["vocabulary"] = cps;
  meta["best_val_perplexity"] = ck.best_val_perplexity;
  meta["epoch_of_best"] = ck.epoch_of_best;
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& t : ck.params.tensors()) shapes.push_back(t.shape());
  meta["shapes"] = shapes;
  const std::string meta_str = meta.dump();

  std::string out(kCheckpointMagic, 4);
  out.push_back(static_cast<char>(kCheckpointVersion));
  detail::put_u32(out, static_cast<std::uint32_t>(meta_str.size()));
  out += meta_str;
  for (const auto& t : ck.params.tensors())
    for (double v : t.values()) detail::put_f64(out, v);
  return out;
}

inline LmCheckpoint deserialize_checkpoint(const std::string& buf) {
  if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrc::bad_magic);
  }
  if (buf.size() < 5) throw CheckpointError(CheckpointErrc::truncated, "missing version");
  const auto version = static_cast<std::uint8_t>(buf[4]);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrc::unsupported_version,
                          "version " + std::to_string(version));
  }
  if (buf.size() < 9) throw CheckpointError(CheckpointErrc::truncated, "missing metadata length");
  const std::size_t meta_len = detail::get_le(buf, 5, 4);
  if (buf.size() < 9 + meta_len) throw CheckpointError(CheckpointErrc::truncated, "metadata");

  LmCheckpoint ck;
  std::vector<Shape> stored;
  try {
    const auto meta = nlohmann::json::parse(buf.begin() + 9,
                                            buf.begin() + 9 + static_cast<std::ptrdiff_t>(meta_len));
    ck.config = config_from_json(meta.at("config"));
    std::vector<char32_t> chars;
    for (std::uint32_t c : meta.at("vocabulary").get<std::vector<std::uint32_t>>())
      chars.push_back(static_cast<char32_t>(c));
    ck.vocab = Vocabulary::from_ordered(chars);
    ck.best_val_perplexity = meta.at("best_val_perplexity").is_null()
                                 ? std::numeric_limits<double>::quiet_NaN()
                                 : meta.at("best_val_perplexity").get<double>();
    ck.epoch_of_best = meta.at("epoch_of_best").get<std::int64_t>();
    stored = meta.at("shapes").get<std::vector<Shape>>();
    ck.config.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrc::bad_metadata, e.what());
  }
  if (ck.vocab.size() != ck.config.vocab_size) {
    throw CheckpointError(CheckpointErrc::shape_mismatch, "vocabulary size differs from config");
  }
  const auto expected = parameter_shapes(ck.config);
  if (stored != expected) {
    throw CheckpointError(CheckpointErrc::shape_mismatch, "stored shapes disagree with config");
  }

  std::size_t pos = 9 + meta_len;
  std::vector<Tensor> ts;
  for (const auto& shape : expected) {
    const std::size_t n = shape_size(shape);
    if (buf.size() - pos < 8 * n) throw CheckpointError(CheckpointErrc::truncated, "parameters");
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i, pos += 8)
      vals[i] = std::bit_cast<double>(detail::get_le(buf, pos, 8));
    ts.emplace_back(shape, std::move(vals), true);
  }
  if (pos != buf.size()) {
    throw CheckpointError(CheckpointErrc::shape_mismatch, "trailing bytes after parameters");
  }
  ck.params = assemble_parameters(ck.config, std::move(ts));
  return ck;
}

inline void save_checkpoint(const LmCheckpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

inline LmCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace clmr
