#include "qap/bertscore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace qap {

using nlohmann::json;

namespace {

Matrix content_rows(const Matrix& reps) {
  if (reps.rows() < 2)
    throw DegenerateInput("greedy_match: no tokens besides [BOS]");
  return reps.bottomRows(reps.rows() - 1);
}

Matrix normalized_rows(const Matrix& m, const char* what) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n == 0.0)
      throw DegenerateInput(std::string(what) + ": zero-norm token vector");
    out.row(r) = m.row(r) / n;
  }
  return out;
}

}  // namespace

double greedy_match(const Matrix& x1_reps, const Matrix& x2_reps) {
  const Matrix a = normalized_rows(content_rows(x1_reps), "greedy_match");
  const Matrix b = normalized_rows(content_rows(x2_reps), "greedy_match");
  const Matrix sims = a * b.transpose();
  return sims.rowwise().maxCoeff().mean();
}

double f_bert(const LayerRepresentations& x1, const LayerRepresentations& x2,
              int layer) {
  if (layer < 0 || layer >= static_cast<int>(x1.layers.size()) ||
      layer >= static_cast<int>(x2.layers.size()))
    throw InvalidArgument("f_bert: layer index out of range");
  const double b12 = greedy_match(x1.layers[static_cast<std::size_t>(layer)],
                                  x2.layers[static_cast<std::size_t>(layer)]);
  const double b21 = greedy_match(x2.layers[static_cast<std::size_t>(layer)],
                                  x1.layers[static_cast<std::size_t>(layer)]);
  const double denom = b12 + b21;
  if (denom <= 0.0) return 0.0;
  return 2.0 * b12 * b21 / denom;
}

std::vector<SentencePair> load_pairs_jsonl(const std::string& path,
                                           const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("load_pairs_jsonl: cannot open " + path);
  std::vector<SentencePair> pairs;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("pairs: ") + e.what(), line_no);
    }
    SentencePair p;
    std::vector<std::string> t1, t2;
    for (const auto& t : j.at("s1")) t1.push_back(t.get<std::string>());
    for (const auto& t : j.at("s2")) t2.push_back(t.get<std::string>());
    p.s1 = tokenize_tokens(t1, vocab);
    p.s2 = tokenize_tokens(t2, vocab);
    if (j.contains("label") && !j["label"].is_null())
      p.label = j["label"].get<int>();
    if (j.contains("judgment") && !j["judgment"].is_null())
      p.judgment = j["judgment"].get<double>();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void save_pairs_jsonl(const std::string& path,
                      const std::vector<SentencePair>& pairs,
                      const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_pairs_jsonl: cannot open " + path);
  for (const auto& p : pairs) {
    json j;
    json s1 = json::array(), s2 = json::array();
    for (std::size_t i = 1; i < p.s1.ids.size(); ++i)
      s1.push_back(vocab.token(p.s1.ids[i]));
    for (std::size_t i = 1; i < p.s2.ids.size(); ++i)
      s2.push_back(vocab.token(p.s2.ids[i]));
    j["s1"] = std::move(s1);
    j["s2"] = std::move(s2);
    j["label"] = p.label ? json(*p.label) : json(nullptr);
    j["judgment"] = p.judgment ? json(*p.judgment) : json(nullptr);
    out << j.dump() << "\n";
  }
}

LayerSelection select_layer(const EncoderParams& encoder,
                            const std::vector<SentencePair>& judged) {
  std::vector<double> judgments;
  for (const auto& p : judged)
    if (p.judgment) judgments.push_back(*p.judgment);
  if (judgments.size() < 3)
    throw InvalidArgument("select_layer: need at least 3 judged pairs");
  const double mean =
      std::accumulate(judgments.begin(), judgments.end(), 0.0) /
      static_cast<double>(judgments.size());
  double var = 0.0;
  for (double v : judgments) var += (v - mean) * (v - mean);
  if (var == 0.0)
    throw DegenerateInput("select_layer: zero-variance judgments");

  const int n_layers = encoder.config.n_layers + 1;
  std::vector<std::vector<double>> scores(
      static_cast<std::size_t>(n_layers));
  for (const auto& p : judged) {
    if (!p.judgment) continue;
    const LayerRepresentations r1 = encode(encoder, p.s1);
    const LayerRepresentations r2 = encode(encoder, p.s2);
    for (int l = 0; l < n_layers; ++l)
      scores[static_cast<std::size_t>(l)].push_back(f_bert(r1, r2, l));
  }

  LayerSelection sel;
  sel.per_layer_pearson.resize(static_cast<std::size_t>(n_layers));
  double best = -2.0;
  for (int l = 0; l < n_layers; ++l) {
    const double r = pearson(scores[static_cast<std::size_t>(l)], judgments);
    sel.per_layer_pearson[static_cast<std::size_t>(l)] = r;
    if (r >= best) {  // ties prefer the deeper layer
      best = r;
      sel.layer = l;
    }
  }
  return sel;
}

Vector extract_features(const EncoderParams& encoder,
                        const SentencePair& pair) {
  const LayerRepresentations r1 = encode(encoder, pair.s1);
  const LayerRepresentations r2 = encode(encoder, pair.s2);
  const int total = static_cast<int>(r1.layers.size());
  const int count = std::min(8, total);
  Vector features(count);
  for (int i = 0; i < count; ++i)
    features[i] = f_bert(r1, r2, total - count + i);
  return features;
}

double LogRegModel::score(const Vector& features) const {
  return weights.dot(features) + bias;
}

double LogRegModel::predict_prob(const Vector& features) const {
  const double s = score(features);
  return 1.0 / (1.0 + std::exp(-s));
}

double logreg_loss(const LogRegModel& model, const Matrix& features,
                   const std::vector<int>& labels) {
  double loss = 0.5 * model.l2_lambda * model.weights.squaredNorm();
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const double t = labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
    const double z = t * model.score(features.row(i).transpose());
    loss += z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  }
  return loss;
}

LogRegModel train_logreg(const Matrix& features, const std::vector<int>& labels,
                         double l2_lambda) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw InvalidArgument("train_logreg: feature/label count mismatch");
  if (features.rows() == 0) throw InvalidArgument("train_logreg: no examples");
  bool has_pos = false, has_neg = false;
  for (int l : labels) (l == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw InvalidArgument("train_logreg: need at least one example per class");
  if (l2_lambda < 0.0)
    throw InvalidArgument("train_logreg: negative regularization");

  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  // Augmented parameter vector [w; b]; the bias column is unregularized.
  Vector theta = Vector::Zero(d + 1);
  Matrix x(n, d + 1);
  x.leftCols(d) = features;
  x.col(d).setOnes();

  for (int iter = 0; iter < 200; ++iter) {
    Vector z = x * theta;
    Vector grad = Vector::Zero(d + 1);
    Matrix hess = Matrix::Zero(d + 1, d + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
      const double sig = 1.0 / (1.0 + std::exp(t * z[i]));  // sigma(-t z)
      grad -= t * sig * x.row(i).transpose();
      const double w = sig * (1.0 - sig);
      hess += w * x.row(i).transpose() * x.row(i);
    }
    grad.head(d) += l2_lambda * theta.head(d);
    hess.topLeftCorner(d, d) += l2_lambda * Matrix::Identity(d, d);
    if (grad.norm() < 1e-8) break;
    // Levenberg damping keeps the step defined when the Hessian is
    // near-singular (separable data with lambda -> 0).
    hess.diagonal().array() += 1e-10;
    Vector step = hess.ldlt().solve(grad);
    theta -= step;
  }

  LogRegModel model;
  model.weights = theta.head(d);
  model.bias = theta[d];
  model.l2_lambda = l2_lambda;
  if (!model.weights.allFinite() || !std::isfinite(model.bias))
    throw EvaluationError("train_logreg: diverged");
  return model;
}

FineTuneResult fine_tune_paraphrase(StudentModel& model,
                                    const std::vector<SentencePair>& pairs,
                                    const FineTuneOptions& opts) {
  bool has_pos = false, has_neg = false;
  for (const auto& p : pairs) {
    if (!p.label)
      throw InvalidArgument("fine_tune_paraphrase: unlabeled pair");
    if (p.s1.length() < 2 || p.s2.length() < 2)
      throw DegenerateInput("fine_tune_paraphrase: empty sentence");
    (*p.label == 1 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg)
    throw InvalidArgument(
        "fine_tune_paraphrase: need at least one example per class");

  // Dropout is disabled during fine-tuning: cosine-similarity features
  // shrink under dropout, so the forward pass must stay deterministic.
  EncoderConfig config = model.encoder.config;
  config.dropout_rate = 0.0;
  model.encoder.config = config;

  const int n_layers_total = config.n_layers + 1;
  const int n_features = std::min(8, n_layers_total);
  const int first_layer = n_layers_total - n_features;

  FineTuneResult result;
  result.head.weights = Vector::Zero(n_features);
  result.head.bias = 0.0;
  result.head.l2_lambda = 0.0;
  result.output_lr_multiplier = opts.output_lr_multiplier;

  Matrix head_w = Matrix::Zero(n_features, 1);
  Matrix head_b = Matrix::Zero(1, 1);

  std::vector<ParamRef> refs = model.encoder.param_refs();
  std::vector<Matrix*> param_ptrs;
  std::vector<double> multipliers;
  for (auto& r : refs) {
    param_ptrs.push_back(r.value);
    multipliers.push_back(1.0);
  }
  param_ptrs.push_back(&head_w);
  multipliers.push_back(opts.output_lr_multiplier);
  param_ptrs.push_back(&head_b);
  multipliers.push_back(opts.output_lr_multiplier);
  AdamOptimizer adam(param_ptrs, {.lr = opts.lr}, multipliers);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    Tape tape;
    EncoderTapeParams enc = register_encoder(tape, model.encoder);
    Tape::Id w_id = tape.input(head_w);
    Tape::Id b_id = tape.input(head_b);

    Tape::Id total_loss = -1;
    for (const auto& pair : pairs) {
      std::vector<Tape::Id> l1, l2;
      encode_on_tape(tape, config, enc, pair.s1, Mode::train, nullptr, &l1);
      encode_on_tape(tape, config, enc, pair.s2, Mode::train, nullptr, &l2);

      std::vector<Tape::Id> feature_ids;
      for (int f = 0; f < n_features; ++f) {
        const int layer = first_layer + f;
        Tape::Id a = tape.normalize_rows(tape.gather_rows(
            l1[static_cast<std::size_t>(layer)], [&] {
              std::vector<int> idx;
              for (int i = 1; i < pair.s1.length(); ++i) idx.push_back(i);
              return idx;
            }()));
        Tape::Id b = tape.normalize_rows(tape.gather_rows(
            l2[static_cast<std::size_t>(layer)], [&] {
              std::vector<int> idx;
              for (int i = 1; i < pair.s2.length(); ++i) idx.push_back(i);
              return idx;
            }()));
        Tape::Id sims = tape.matmul_nt(a, b);
        Tape::Id b12 = tape.mean_all(tape.rowwise_max(sims));
        Tape::Id b21 = tape.mean_all(
            tape.rowwise_max(tape.matmul_nt(b, a)));
        // harmonic mean 2ab/(a+b)
        Tape::Id fb = tape.scale(
            tape.cdiv(tape.cmul(b12, b21), tape.add(b12, b21)), 2.0);
        feature_ids.push_back(fb);
      }
      // score = w . features + b
      Tape::Id score = -1;
      for (int f = 0; f < n_features; ++f) {
        Tape::Id term = tape.cmul(
            feature_ids[static_cast<std::size_t>(f)],
            tape.gather_rows(w_id, {f}));
        score = score < 0 ? term : tape.add(score, term);
      }
      score = tape.add(score, b_id);
      Tape::Id loss = tape.logistic_loss(score, *pair.label);
      total_loss = total_loss < 0 ? loss : tape.add(total_loss, loss);
    }
    Tape::Id objective =
        tape.scale(total_loss, 1.0 / static_cast<double>(pairs.size()));
    tape.backward(objective);
    result.epoch_loss.push_back(tape.value(objective)(0, 0));

    std::vector<Matrix> grads;
    for (Tape::Id id : enc.ordered) grads.push_back(tape.grad(id));
    grads.push_back(tape.grad(w_id));
    grads.push_back(tape.grad(b_id));
    adam.step(grads);
  }

  result.head.weights = head_w.col(0);
  result.head.bias = head_b(0, 0);
  return result;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw InvalidArgument("auroc: size mismatch");
  long n_pos = 0, n_neg = 0;
  for (int l : labels) (l == 1 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw DegenerateInput("auroc: both classes required");

  // Average ranks with ties sharing the mean rank.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) /
                                 2.0 +
                             1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mean_rank;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (labels[k] == 1) rank_sum_pos += rank[k];
  const double u = rank_sum_pos - static_cast<double>(n_pos) *
                                      (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw InvalidArgument("pearson: need two equal-length samples");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw DegenerateInput("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace qap
