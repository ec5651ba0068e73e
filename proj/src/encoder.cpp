#include "qap/encoder.hpp"

#include <cstring>
#include <fstream>

namespace qap {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-8;
constexpr char kMagic[4] = {'Q', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double std,
                     std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  return m;
}

}  // namespace

void EncoderConfig::validate() const {
  if (d <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_width <= 0)
    throw ConfigError("EncoderConfig: dimensions must be positive");
  if (d % n_heads != 0)
    throw ConfigError("EncoderConfig: d must be divisible by n_heads");
  if (max_positions < 456 + 50 + 2)
    throw ConfigError("EncoderConfig: max_positions must cover 456+50+2 tokens");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("EncoderConfig: dropout_rate must be in [0,1)");
  if (vocab_size <= 0)
    throw ConfigError("EncoderConfig: vocab_size must be positive");
}

std::vector<ParamRef> EncoderParams::param_refs() {
  std::vector<ParamRef> refs;
  refs.push_back({"token_embedding", &token_embedding});
  refs.push_back({"position_embedding", &position_embedding});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerParams& lp = layers[l];
    refs.push_back({p + "wq", &lp.wq});
    refs.push_back({p + "bq", &lp.bq});
    refs.push_back({p + "wk", &lp.wk});
    refs.push_back({p + "bk", &lp.bk});
    refs.push_back({p + "wv", &lp.wv});
    refs.push_back({p + "bv", &lp.bv});
    refs.push_back({p + "wo", &lp.wo});
    refs.push_back({p + "bo", &lp.bo});
    refs.push_back({p + "ln1_gain", &lp.ln1_gain});
    refs.push_back({p + "ln1_bias", &lp.ln1_bias});
    refs.push_back({p + "ffn_w1", &lp.ffn_w1});
    refs.push_back({p + "ffn_b1", &lp.ffn_b1});
    refs.push_back({p + "ffn_w2", &lp.ffn_w2});
    refs.push_back({p + "ffn_b2", &lp.ffn_b2});
    refs.push_back({p + "ln2_gain", &lp.ln2_gain});
    refs.push_back({p + "ln2_bias", &lp.ln2_bias});
  }
  refs.push_back({"final_ln_gain", &final_ln_gain});
  refs.push_back({"final_ln_bias", &final_ln_bias});
  return refs;
}

std::uint64_t EncoderParams::checksum() const {
  std::uint64_t h = kFnvOffset;
  auto& self = const_cast<EncoderParams&>(*this);
  for (const auto& ref : self.param_refs()) {
    h = fnv1a(ref.name, h);
    h = fnv1a(ref.value->data(),
              sizeof(double) * static_cast<std::size_t>(ref.value->size()), h);
  }
  return h;
}

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  EncoderParams p;
  p.config = config;
  p.token_embedding = normal_matrix(config.vocab_size, config.d, kInitStd, rng);
  p.position_embedding =
      normal_matrix(config.max_positions, config.d, kInitStd, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerParams lp;
    lp.wq = normal_matrix(config.d, config.d, kInitStd, rng);
    lp.bq = Matrix::Zero(1, config.d);
    lp.wk = normal_matrix(config.d, config.d, kInitStd, rng);
    lp.bk = Matrix::Zero(1, config.d);
    lp.wv = normal_matrix(config.d, config.d, kInitStd, rng);
    lp.bv = Matrix::Zero(1, config.d);
    lp.wo = normal_matrix(config.d, config.d, kInitStd, rng);
    lp.bo = Matrix::Zero(1, config.d);
    lp.ln1_gain = Matrix::Ones(1, config.d);
    lp.ln1_bias = Matrix::Zero(1, config.d);
    lp.ffn_w1 = normal_matrix(config.d, config.ffn_width, kInitStd, rng);
    lp.ffn_b1 = Matrix::Zero(1, config.ffn_width);
    lp.ffn_w2 = normal_matrix(config.ffn_width, config.d, kInitStd, rng);
    lp.ffn_b2 = Matrix::Zero(1, config.d);
    lp.ln2_gain = Matrix::Ones(1, config.d);
    lp.ln2_bias = Matrix::Zero(1, config.d);
    p.layers.push_back(std::move(lp));
  }
  p.final_ln_gain = Matrix::Ones(1, config.d);
  p.final_ln_bias = Matrix::Zero(1, config.d);
  return p;
}

EncoderTapeParams register_encoder(Tape& tape, const EncoderParams& params) {
  EncoderTapeParams tp;
  auto reg = [&](const Matrix& m) {
    Tape::Id id = tape.input(m);
    tp.ordered.push_back(id);
    return id;
  };
  tp.token_embedding = reg(params.token_embedding);
  tp.position_embedding = reg(params.position_embedding);
  for (const auto& lp : params.layers) {
    EncoderTapeParams::Layer tl;
    tl.wq = reg(lp.wq);
    tl.bq = reg(lp.bq);
    tl.wk = reg(lp.wk);
    tl.bk = reg(lp.bk);
    tl.wv = reg(lp.wv);
    tl.bv = reg(lp.bv);
    tl.wo = reg(lp.wo);
    tl.bo = reg(lp.bo);
    tl.ln1_gain = reg(lp.ln1_gain);
    tl.ln1_bias = reg(lp.ln1_bias);
    tl.ffn_w1 = reg(lp.ffn_w1);
    tl.ffn_b1 = reg(lp.ffn_b1);
    tl.ffn_w2 = reg(lp.ffn_w2);
    tl.ffn_b2 = reg(lp.ffn_b2);
    tl.ln2_gain = reg(lp.ln2_gain);
    tl.ln2_bias = reg(lp.ln2_bias);
    tp.layers.push_back(tl);
  }
  tp.final_ln_gain = reg(params.final_ln_gain);
  tp.final_ln_bias = reg(params.final_ln_bias);
  return tp;
}

Tape::Id encode_on_tape(Tape& tape, const EncoderConfig& config,
                        const EncoderTapeParams& p, const TokenSequence& tokens,
                        Mode mode, std::mt19937_64* rng,
                        std::vector<Tape::Id>* all_layers,
                        LayerNormProbe* probe) {
  tokens.validate();
  const int L = tokens.length();
  if (L > config.max_positions)
    throw InvalidArgument("encode: sequence exceeds max_positions");
  const bool use_dropout = mode == Mode::train && config.dropout_rate > 0.0;
  if (use_dropout && rng == nullptr)
    throw InvalidArgument("encode: train mode with dropout needs an rng");

  std::vector<int> positions(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) positions[static_cast<std::size_t>(i)] = i;

  Tape::Id x = tape.add(tape.gather_rows(p.token_embedding, tokens.ids),
                        tape.gather_rows(p.position_embedding, positions));
  if (all_layers) all_layers->push_back(x);

  const int dh = config.d / config.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int l = 0; l < config.n_layers; ++l) {
    const auto& tl = p.layers[static_cast<std::size_t>(l)];

    Tape::Id h = tape.layer_norm(x, tl.ln1_gain, tl.ln1_bias, kLayerNormEps,
                                 probe);
    Tape::Id q = tape.add_row(tape.matmul(h, tl.wq), tl.bq);
    Tape::Id k = tape.add_row(tape.matmul(h, tl.wk), tl.bk);
    Tape::Id v = tape.add_row(tape.matmul(h, tl.wv), tl.bv);

    std::vector<Tape::Id> head_outputs;
    head_outputs.reserve(static_cast<std::size_t>(config.n_heads));
    for (int hd = 0; hd < config.n_heads; ++hd) {
      Tape::Id qh = tape.slice_cols(q, hd * dh, dh);
      Tape::Id kh = tape.slice_cols(k, hd * dh, dh);
      Tape::Id vh = tape.slice_cols(v, hd * dh, dh);
      Tape::Id scores = tape.scale(tape.matmul_nt(qh, kh), att_scale);
      Tape::Id attn = tape.softmax_rows(scores);
      if (use_dropout) attn = tape.dropout(attn, config.dropout_rate, *rng);
      head_outputs.push_back(tape.matmul(attn, vh));
    }
    Tape::Id attn_out =
        tape.add_row(tape.matmul(tape.concat_cols(head_outputs), tl.wo), tl.bo);
    if (use_dropout)
      attn_out = tape.dropout(attn_out, config.dropout_rate, *rng);
    x = tape.add(x, attn_out);

    Tape::Id h2 = tape.layer_norm(x, tl.ln2_gain, tl.ln2_bias, kLayerNormEps,
                                  probe);
    Tape::Id ff = tape.add_row(
        tape.matmul(tape.gelu(tape.add_row(tape.matmul(h2, tl.ffn_w1),
                                           tl.ffn_b1)),
                    tl.ffn_w2),
        tl.ffn_b2);
    if (use_dropout) ff = tape.dropout(ff, config.dropout_rate, *rng);
    x = tape.add(x, ff);

    const bool last = l == config.n_layers - 1;
    if (last)
      x = tape.layer_norm(x, p.final_ln_gain, p.final_ln_bias, kLayerNormEps,
                          probe);
    if (all_layers) all_layers->push_back(x);
  }
  return x;
}

LayerRepresentations encode(const EncoderParams& params,
                            const TokenSequence& tokens, Mode mode,
                            std::uint64_t seed, LayerNormProbe* probe) {
  Tape tape;
  EncoderTapeParams tp = register_encoder(tape, params);
  std::mt19937_64 rng(seed);
  std::vector<Tape::Id> layer_ids;
  encode_on_tape(tape, params.config, tp, tokens, mode, &rng, &layer_ids,
                 probe);
  LayerRepresentations reps;
  reps.layers.reserve(layer_ids.size());
  for (Tape::Id id : layer_ids) reps.layers.push_back(tape.value(id));
  ensure_finite(reps.final_layer(), "encode output");
  return reps;
}

// ---------------------------------------------------------------------------
// Checkpoint io

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i32(std::string& buf, std::int32_t v) {
  put_u32(buf, static_cast<std::uint32_t>(v));
}

void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

class Reader {
 public:
  Reader(const std::string& buf) : buf_(buf) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(buf_[at_ + i]))
           << (8 * i);
    at_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(buf_[at_ + i]))
           << (8 * i);
    at_ += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(at_, n);
    at_ += n;
    return s;
  }
  std::size_t at() const { return at_; }

 private:
  void need(std::size_t n) const {
    if (at_ + n > buf_.size())
      throw CheckpointError("checkpoint: truncated file");
  }
  const std::string& buf_;
  std::size_t at_ = 0;
};

}  // namespace

void write_checkpoint(
    const std::string& path, ModelKind kind, const EncoderConfig& config,
    const std::vector<std::pair<std::string, const Matrix*>>& tensors) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kCheckpointVersion);
  buf.push_back(static_cast<char>(kind));
  put_i32(buf, config.d);
  put_i32(buf, config.n_layers);
  put_i32(buf, config.n_heads);
  put_i32(buf, config.ffn_width);
  put_i32(buf, config.max_positions);
  put_f64(buf, config.dropout_rate);
  put_i32(buf, config.vocab_size);
  put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    put_i32(buf, static_cast<std::int32_t>(m->rows()));
    put_i32(buf, static_cast<std::int32_t>(m->cols()));
    for (Eigen::Index c = 0; c < m->cols(); ++c)
      for (Eigen::Index r = 0; r < m->rows(); ++r) put_f64(buf, (*m)(r, c));
  }
  put_u64(buf, fnv1a(buf.data(), buf.size()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("write_checkpoint: cannot open " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write_checkpoint: write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("write_checkpoint: rename failed for " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 8 + 4) throw CheckpointError("checkpoint: truncated file");
  std::uint64_t trailer = 0;
  for (int i = 0; i < 8; ++i)
    trailer |= static_cast<std::uint64_t>(
                   static_cast<unsigned char>(buf[buf.size() - 8 + i]))
               << (8 * i);
  if (fnv1a(buf.data(), buf.size() - 8) != trailer)
    throw CheckpointError("checkpoint: checksum mismatch");

  Reader r(buf);
  if (r.bytes(4) != std::string(kMagic, 4))
    throw CheckpointError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " +
                          std::to_string(version));
  CheckpointData data;
  data.kind = static_cast<ModelKind>(r.bytes(1)[0]);
  data.config.d = r.i32();
  data.config.n_layers = r.i32();
  data.config.n_heads = r.i32();
  data.config.ffn_width = r.i32();
  data.config.max_positions = r.i32();
  data.config.dropout_rate = r.f64();
  data.config.vocab_size = r.i32();
  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    const std::int32_t rows = r.i32();
    const std::int32_t cols = r.i32();
    if (rows < 0 || cols < 0)
      throw CheckpointError("checkpoint: bad tensor shape");
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index row = 0; row < rows; ++row) m(row, c) = r.f64();
    if (!m.allFinite())
      throw CheckpointError("checkpoint: non-finite tensor " + name);
    data.tensors.emplace_back(std::move(name), std::move(m));
  }
  return data;
}

const Matrix& CheckpointData::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  throw CheckpointError("checkpoint: missing tensor " + name);
}

std::vector<std::pair<std::string, const Matrix*>> encoder_tensor_list(
    const EncoderParams& params) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  auto& self = const_cast<EncoderParams&>(params);
  for (const auto& ref : self.param_refs()) out.emplace_back(ref.name, ref.value);
  return out;
}

EncoderParams encoder_from_checkpoint(const CheckpointData& data) {
  EncoderParams params = init_params(data.config, 0);
  for (const auto& ref : params.param_refs()) {
    const Matrix& m = data.tensor(ref.name);
    if (m.rows() != ref.value->rows() || m.cols() != ref.value->cols())
      throw CheckpointError("checkpoint: shape mismatch for " + ref.name);
    *ref.value = m;
  }
  return params;
}

void save_encoder_checkpoint(const EncoderParams& params,
                             const std::string& path) {
  write_checkpoint(path, ModelKind::encoder, params.config,
                   encoder_tensor_list(params));
}

EncoderParams load_encoder_checkpoint(const std::string& path,
                                      int expected_vocab_size) {
  CheckpointData data = read_checkpoint(path);
  if (data.kind != ModelKind::encoder)
    throw CheckpointError("checkpoint: not an encoder checkpoint");
  if (expected_vocab_size >= 0 && data.config.vocab_size != expected_vocab_size)
    throw ConfigError("checkpoint: vocab_size mismatch (checkpoint " +
                      std::to_string(data.config.vocab_size) + ", runtime " +
                      std::to_string(expected_vocab_size) + ")");
  return encoder_from_checkpoint(data);
}

}  // namespace qap
