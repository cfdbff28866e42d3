#pragma once

// Checkpoint file: "BRNSCKP\0", u32 format_version, u32 block count, then
// named blocks (u8 kind; matrices as u64 rows, u64 cols, column-major f64;
// json blocks as length-prefixed text), then SHA-256 of everything before.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "brains/core/binary_io.hpp"
#include "brains/core/digest.hpp"
#include "brains/core/error.hpp"
#include "brains/core/files.hpp"
#include "brains/diagnose.hpp"

namespace brains {

inline constexpr std::array<char, 8> kCheckpointMagic = {'B', 'R', 'N', 'S', 'C', 'K', 'P', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  Model model;
  Sha256 digest{};  // trailing digest of the serialized form

  std::string digest_hex() const { return to_hex(digest); }
};

inline json encoder_config_to_json(const EncoderConfig& c) {
  return {{"mode", to_string(c.mode)}, {"d", c.d},           {"vocab", c.vocab}, {"layers", c.layers},
          {"heads", c.heads},          {"max_len", c.max_len}, {"seed", c.seed}};
}

inline EncoderConfig encoder_config_from_json(const json& j, EncoderConfig c = {}) {
  if (auto it = j.find("mode"); it != j.end()) {
    const auto m = it->get<std::string>();
    if (m == "structured") c.mode = EncoderMode::Structured;
    else if (m == "text") c.mode = EncoderMode::Text;
    else throw Error(ErrorCode::BadConfig, "encoder mode must be structured or text", {{"mode", m}});
  }
  c.d = j.value("d", c.d);
  c.vocab = j.value("vocab", c.vocab);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.max_len = j.value("max_len", c.max_len);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline json model_config_to_json(const ModelConfig& c) {
  return {{"encoder", encoder_config_to_json(c.encoder)},
          {"d_k", c.d_k},
          {"shared_kv", c.shared_kv},
          {"seed", c.seed},
          {"threshold", c.threshold},
          {"k", c.k},
          {"n1", c.n1}};
}

inline ModelConfig model_config_from_json(const json& j, ModelConfig c = {}) {
  if (auto it = j.find("encoder"); it != j.end()) c.encoder = encoder_config_from_json(*it, c.encoder);
  c.d_k = j.value("d_k", c.d_k);
  c.shared_kv = j.value("shared_kv", c.shared_kv);
  c.seed = j.value("seed", c.seed);
  c.threshold = j.value("threshold", c.threshold);
  c.k = j.value("k", c.k);
  c.n1 = j.value("n1", c.n1);
  return c;
}

namespace detail {

enum class BlockKind : std::uint8_t { Matrix = 0, Json = 1 };

class BlockWriter {
 public:
  void matrix(const std::string& name, const Mat& m) { items_.push_back({name, BlockKind::Matrix, m, {}}); }
  void vector(const std::string& name, const Vec& v) { matrix(name, Mat(v)); }
  void text(const std::string& name, const json& j) { items_.push_back({name, BlockKind::Json, {}, j.dump()}); }

  std::vector<std::uint8_t> finish(std::uint32_t version) const {
    bin::Writer w;
    w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.u32(version);
    w.u32(static_cast<std::uint32_t>(items_.size()));
    for (const auto& it : items_) {
      w.str(it.name);
      w.u8(static_cast<std::uint8_t>(it.kind));
      if (it.kind == BlockKind::Matrix) {
        w.u64(static_cast<std::uint64_t>(it.m.rows()));
        w.u64(static_cast<std::uint64_t>(it.m.cols()));
        for (Eigen::Index i = 0; i < it.m.size(); ++i) w.f64(it.m.data()[i]);
      } else {
        w.str(it.text);
      }
    }
    auto bytes = w.data();
    const auto d = sha256(std::span<const std::uint8_t>(bytes));
    bytes.insert(bytes.end(), d.begin(), d.end());
    return bytes;
  }

 private:
  struct Item {
    std::string name;
    BlockKind kind;
    Mat m;
    std::string text;
  };
  std::vector<Item> items_;
};

struct Blocks {
  std::map<std::string, Mat> matrices;
  std::map<std::string, json> texts;

  const Mat& matrix(const std::string& name) const {
    auto it = matrices.find(name);
    if (it == matrices.end()) throw Error(ErrorCode::CorruptCheckpoint, "missing block " + name, {{"block", name}});
    return it->second;
  }
  Mat matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
    const Mat& m = matrix(name);
    if (m.rows() != rows || m.cols() != cols)
      throw Error(ErrorCode::CorruptCheckpoint, "block has the wrong shape: " + name,
                  {{"block", name}, {"expected", {rows, cols}}, {"got", {m.rows(), m.cols()}}});
    return m;
  }
  Vec vector(const std::string& name, Eigen::Index n) const { return matrix(name, n, 1); }
  const json& text(const std::string& name) const {
    auto it = texts.find(name);
    if (it == texts.end()) throw Error(ErrorCode::CorruptCheckpoint, "missing block " + name, {{"block", name}});
    return it->second;
  }
};

inline std::string block_name(const std::string& prefix, std::size_t i, const char* field) {
  return prefix + std::to_string(i) + "." + field;
}

}  // namespace detail

inline std::vector<std::uint8_t> checkpoint_serialize(const Model& m, std::uint32_t version = kCheckpointVersion) {
  detail::BlockWriter w;
  w.text("config", model_config_to_json(m.config));
  w.text("train", train_config_to_json(m.train));
  w.text("stats", stats_to_json(m.stats));
  json prompt = json::array();
  Mat prompt_emb(m.fusion.d_k, static_cast<Eigen::Index>(m.prompt.size()));
  for (std::size_t i = 0; i < m.prompt.size(); ++i) {
    prompt.push_back({{"role", to_string(m.prompt.slots[i].role)}, {"text", m.prompt.slots[i].text}});
    prompt_emb.col(static_cast<Eigen::Index>(i)) = m.prompt.slots[i].embedding;
  }
  w.text("prompt", prompt);
  w.matrix("prompt.embeddings", prompt_emb);
  w.matrix("encoder.projection", m.encoder.projection);
  w.matrix("encoder.directions", m.encoder.directions);
  w.matrix("encoder.label_embedding", m.encoder.label_embedding);
  if (m.encoder.config.mode == EncoderMode::Text) {
    w.matrix("encoder.embedding", m.encoder.embedding);
    w.vector("encoder.cls_embedding", m.encoder.cls_embedding);
    for (std::size_t i = 0; i < m.encoder.blocks.size(); ++i) {
      const auto& b = m.encoder.blocks[i];
      const std::string p = "encoder.block";
      w.matrix(detail::block_name(p, i, "wq"), b.wq);
      w.matrix(detail::block_name(p, i, "wk"), b.wk);
      w.matrix(detail::block_name(p, i, "wv"), b.wv);
      w.matrix(detail::block_name(p, i, "wo"), b.wo);
      w.matrix(detail::block_name(p, i, "w1"), b.w1);
      w.vector(detail::block_name(p, i, "b1"), b.b1);
      w.matrix(detail::block_name(p, i, "w2"), b.w2);
      w.vector(detail::block_name(p, i, "b2"), b.b2);
      w.vector(detail::block_name(p, i, "ln1_gain"), b.ln1_gain);
      w.vector(detail::block_name(p, i, "ln1_bias"), b.ln1_bias);
      w.vector(detail::block_name(p, i, "ln2_gain"), b.ln2_gain);
      w.vector(detail::block_name(p, i, "ln2_bias"), b.ln2_bias);
    }
  }
  w.matrix("fusion.wq", m.fusion.wq);
  w.matrix("fusion.wk", m.fusion.wk);
  if (!m.fusion.shared_kv) w.matrix("fusion.wv", m.fusion.wv);
  w.matrix("head.w", m.head.w);
  w.vector("head.b", m.head.b);
  w.matrix("reranker.m", m.reranker.m);
  return w.finish(version);
}

inline Sha256 checkpoint_digest(const Model& m) {
  const auto bytes = checkpoint_serialize(m);
  Sha256 d{};
  std::copy(bytes.end() - 32, bytes.end(), d.begin());
  return d;
}

inline Checkpoint checkpoint_deserialize(std::span<const std::uint8_t> bytes) {
  auto corrupt = [](const std::string& why) { return Error(ErrorCode::CorruptCheckpoint, "corrupt checkpoint: " + why); };
  if (bytes.size() < kCheckpointMagic.size() + 8 + 32) throw corrupt("file too short");
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }))
    throw corrupt("bad magic");
  const auto body = bytes.first(bytes.size() - 32);
  const auto stored = bytes.last(32);
  const auto actual = sha256(body);
  if (!std::equal(actual.begin(), actual.end(), stored.begin())) throw corrupt("digest mismatch");

  bin::Reader r(body.data(), body.size());
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size());
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::VersionMismatch,
                "checkpoint format_version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")",
                {{"found", version}, {"expected", kCheckpointVersion}});
  const auto count = r.u32();
  detail::Blocks blocks;
  for (std::uint32_t i = 0; i < count && r.ok(); ++i) {
    auto name = r.str(4096);
    const auto kind = r.u8();
    if (kind == static_cast<std::uint8_t>(detail::BlockKind::Matrix)) {
      const auto rows = r.u64();
      const auto cols = r.u64();
      if (!r.ok() || rows > (1u << 24) || cols > (1u << 24) || rows * cols > r.remaining() / 8)
        throw corrupt("bad matrix block " + name);
      Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = r.f64();
      blocks.matrices.emplace(std::move(name), std::move(m));
    } else if (kind == static_cast<std::uint8_t>(detail::BlockKind::Json)) {
      const auto text = r.str();
      if (!r.ok()) break;
      auto j = json::parse(text, nullptr, false);
      if (j.is_discarded()) throw corrupt("unparseable json block " + name);
      blocks.texts.emplace(std::move(name), std::move(j));
    } else {
      throw corrupt("unknown block kind");
    }
  }
  if (!r.ok() || r.remaining() != 0) throw corrupt("truncated or trailing block data");

  Checkpoint ck;
  ck.format_version = version;
  std::copy(stored.begin(), stored.end(), ck.digest.begin());
  Model& m = ck.model;
  try {
    m.config = model_config_from_json(blocks.text("config"));
    m.train = train_config_from_json(blocks.text("train"));
    m.stats = stats_from_json(blocks.text("stats"));
  } catch (const json::exception& e) {
    throw corrupt(std::string("bad config block: ") + e.what());
  }
  const auto d = static_cast<Eigen::Index>(m.config.encoder.d);
  const auto dk = static_cast<Eigen::Index>(m.config.d_k);
  const auto f = static_cast<Eigen::Index>(kFeatureLength);
  const auto nl = static_cast<Eigen::Index>(kNumSubtypes);
  m.encoder.config = m.config.encoder;
  m.encoder.projection = blocks.matrix("encoder.projection", d, f);
  m.encoder.directions = blocks.matrix("encoder.directions", f, d);
  m.encoder.label_embedding = blocks.matrix("encoder.label_embedding", nl, d);
  if (m.encoder.config.mode == EncoderMode::Text) {
    m.encoder.embedding = blocks.matrix("encoder.embedding", m.config.encoder.vocab, d);
    m.encoder.cls_embedding = blocks.vector("encoder.cls_embedding", d);
    for (int i = 0; i < m.config.encoder.layers; ++i) {
      const std::string p = "encoder.block";
      const auto u = static_cast<std::size_t>(i);
      TransformerBlock b;
      b.wq = blocks.matrix(detail::block_name(p, u, "wq"), d, d);
      b.wk = blocks.matrix(detail::block_name(p, u, "wk"), d, d);
      b.wv = blocks.matrix(detail::block_name(p, u, "wv"), d, d);
      b.wo = blocks.matrix(detail::block_name(p, u, "wo"), d, d);
      b.w1 = blocks.matrix(detail::block_name(p, u, "w1"), 4 * d, d);
      b.b1 = blocks.vector(detail::block_name(p, u, "b1"), 4 * d);
      b.w2 = blocks.matrix(detail::block_name(p, u, "w2"), d, 4 * d);
      b.b2 = blocks.vector(detail::block_name(p, u, "b2"), d);
      b.ln1_gain = blocks.vector(detail::block_name(p, u, "ln1_gain"), d);
      b.ln1_bias = blocks.vector(detail::block_name(p, u, "ln1_bias"), d);
      b.ln2_gain = blocks.vector(detail::block_name(p, u, "ln2_gain"), d);
      b.ln2_bias = blocks.vector(detail::block_name(p, u, "ln2_bias"), d);
      m.encoder.blocks.push_back(std::move(b));
    }
  }
  m.fusion.d_k = m.config.d_k;
  m.fusion.shared_kv = m.config.shared_kv;
  m.fusion.wq = blocks.matrix("fusion.wq", dk, d);
  m.fusion.wk = blocks.matrix("fusion.wk", dk, d);
  m.fusion.wv = m.fusion.shared_kv ? Mat() : blocks.matrix("fusion.wv", dk, d);
  m.head.w = blocks.matrix("head.w", nl, dk + d);
  m.head.b = blocks.vector("head.b", nl);
  m.reranker.m = blocks.matrix("reranker.m", d, d);
  m.reranker.trainable = m.train.unfreeze_reranker;

  const auto& prompt = blocks.text("prompt");
  const Mat emb = blocks.matrix("prompt.embeddings", dk, static_cast<Eigen::Index>(prompt.size()));
  static constexpr std::array<SlotRole, 8> kRoles = {SlotRole::Bos,     SlotRole::System, SlotRole::Instruction,
                                                     SlotRole::Target,  SlotRole::RagHere, SlotRole::Fused,
                                                     SlotRole::Assistant, SlotRole::Eos};
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    const auto role = prompt[i].value("role", "");
    auto it = std::find_if(kRoles.begin(), kRoles.end(), [&](SlotRole r) { return to_string(r) == role; });
    if (it == kRoles.end()) throw corrupt("unknown prompt slot role " + role);
    m.prompt.slots.push_back({*it, prompt[i].value("text", ""), emb.col(static_cast<Eigen::Index>(i))});
  }
  return ck;
}

inline Checkpoint make_checkpoint(Model m) {
  Checkpoint ck;
  ck.digest = checkpoint_digest(m);
  ck.model = std::move(m);
  return ck;
}

inline Sha256 checkpoint_save(const Model& m, const std::string& path) {
  const auto bytes = checkpoint_serialize(m);
  write_file(path, bytes);
  Sha256 d{};
  std::copy(bytes.end() - 32, bytes.end(), d.begin());
  return d;
}

inline Checkpoint checkpoint_load(const std::string& path) { return checkpoint_deserialize(read_file_bytes(path)); }

}  // namespace brains
