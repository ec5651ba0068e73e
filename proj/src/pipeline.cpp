#include "qap/pipeline.hpp"

#include <chrono>
#include <fstream>

#include "qap/metrics.hpp"

namespace qap {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("file_hash: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return fnv1a(buf.data(), buf.size());
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_json_file: cannot open " + path.string());
  out << j.dump(2) << "\n";
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_json_file: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
  return j;
}

RunLock::RunLock(const fs::path& out_dir) : path_(out_dir / ".lock") {
  fs::create_directories(out_dir);
  if (fs::exists(path_))
    throw Error("another run owns " + out_dir.string() +
                " (remove .lock if it is stale)");
  std::ofstream lock(path_);
  lock << "locked\n";
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

Pipeline::Pipeline(RunConfig config, fs::path out_dir)
    : config_(std::move(config)), out_dir_(std::move(out_dir)) {
  config_.validate();
  fs::create_directories(out_dir_);
}

std::uint64_t Pipeline::stage_key(const std::string& stage,
                                  const StageIo& io) const {
  std::uint64_t h = fnv1a(config_.stage_subset(stage));
  for (const auto& input : io.inputs) {
    h = fnv1a(input.filename().string(), h);
    h = fnv1a_u64(file_hash(input), h);
  }
  return h;
}

bool Pipeline::stage_is_fresh(const std::string& stage, const StageIo& io) {
  const fs::path manifest_path = out_dir_ / stage / "manifest.json";
  if (!fs::exists(manifest_path)) return false;
  for (const auto& input : io.inputs)
    if (!fs::exists(input)) return false;

  json manifest;
  try {
    manifest = read_json_file(manifest_path);
  } catch (const Error&) {
    return false;
  }
  if (!manifest.contains("key") || !manifest.contains("outputs")) return false;
  if (manifest["key"].get<std::string>() != to_hex(stage_key(stage, io)))
    return false;

  // Key matches this config and these inputs; the recorded outputs must be
  // intact, otherwise the artifact store has been tampered with.
  for (const auto& [name, hash] : manifest["outputs"].items()) {
    const fs::path p = out_dir_ / stage / name;
    if (!fs::exists(p) || to_hex(file_hash(p)) != hash.get<std::string>())
      throw StaleArtifact("stage " + stage + ": artifact " + name +
                          " is stale or missing");
  }
  return true;
}

void Pipeline::record_stage(const std::string& stage, const StageIo& io) {
  json manifest;
  manifest["stage"] = stage;
  manifest["key"] = to_hex(stage_key(stage, io));
  json inputs = json::object();
  for (const auto& input : io.inputs)
    inputs[input.string()] = to_hex(file_hash(input));
  json outputs = json::object();
  for (const auto& output : io.outputs)
    outputs[output.filename().string()] = to_hex(file_hash(output));
  manifest["inputs"] = std::move(inputs);
  manifest["outputs"] = std::move(outputs);
  write_json_file(out_dir_ / stage / "manifest.json", manifest);
}

void Pipeline::run_stage(const std::string& stage, const StageIo& io,
                         const std::function<void()>& body) {
  for (const auto& input : io.inputs)
    if (!fs::exists(input))
      throw IoError("stage " + stage + ": missing input " + input.string());
  if (stage_is_fresh(stage, io)) {
    executions_[stage] = 0;
    return;
  }
  fs::create_directories(out_dir_ / stage);
  body();
  record_stage(stage, io);
  executions_[stage] = 1;
}

Vocabulary Pipeline::vocabulary() const {
  return load_vocabulary((out_dir_ / "synth" / "vocab.json").string());
}

void Pipeline::run_synth() {
  StageIo io;
  io.inputs = {config_.ner_prompts_path, config_.sentiment_prompts_path,
               config_.calibration_words_path};
  const fs::path dir = out_dir_ / "synth";
  io.outputs = {dir / "corpus.jsonl",       dir / "vocab.json",
                dir / "ner_train.jsonl",    dir / "ner_eval.jsonl",
                dir / "paraphrase_train.jsonl", dir / "paraphrase_eval.jsonl",
                dir / "judged_pairs.jsonl", dir / "sentiment_eval.jsonl"};
  run_stage("synth", io, [&] {
    const SynthOutputs data = build_synthetic_data(config_);
    save_dataset((dir / "corpus.jsonl").string(), data.corpus, data.vocab);
    save_vocabulary((dir / "vocab.json").string(), data.vocab);
    save_ner_jsonl((dir / "ner_train.jsonl").string(), data.ner_train,
                   data.vocab, data.tag_set);
    save_ner_jsonl((dir / "ner_eval.jsonl").string(), data.ner_eval,
                   data.vocab, data.tag_set);
    save_pairs_jsonl((dir / "paraphrase_train.jsonl").string(),
                     data.paraphrase_train, data.vocab);
    save_pairs_jsonl((dir / "paraphrase_eval.jsonl").string(),
                     data.paraphrase_eval, data.vocab);
    save_pairs_jsonl((dir / "judged_pairs.jsonl").string(), data.judged_pairs,
                     data.vocab);
    save_sentiment_jsonl((dir / "sentiment_eval.jsonl").string(),
                         data.sentiment_eval, data.vocab);
  });
}

void Pipeline::run_teacher() {
  const fs::path synth = out_dir_ / "synth";
  StageIo io;
  io.inputs = {synth / "corpus.jsonl", synth / "vocab.json"};
  const fs::path dir = out_dir_ / "teacher";
  io.outputs = {dir / "teacher.ckpt", dir / "train_log.json"};
  run_stage("teacher", io, [&] {
    const Vocabulary vocab = vocabulary();
    const auto corpus = load_dataset(
        (synth / "corpus.jsonl").string(), vocab,
        {config_.max_passage_tokens, config_.max_question_tokens});

    std::vector<LabeledQA> data;
    for (const auto& entry : corpus) {
      for (const auto& qa : entry.qas) {
        LabeledQA ex;
        ex.context = entry.passage.tokens;
        ex.question = qa.question;
        ex.gold = qa.answer_span.value_or(Span{0, 0});
        data.push_back(std::move(ex));
      }
    }
    if (data.empty()) throw ValidationError("teacher: corpus has no questions");

    EncoderConfig enc = config_.encoder;
    enc.vocab_size = vocab.size();
    TeacherModel model = init_teacher(enc, derive_seed(config_.seed, "teacher"));
    TeacherTrainOptions opts;
    opts.epochs = config_.teacher_epochs;
    opts.lr = config_.teacher_lr;
    opts.batch_size = config_.teacher_batch_size;
    opts.holdout_fraction = config_.teacher_holdout_fraction;
    opts.seed = derive_seed(config_.seed, "teacher-train");
    const std::vector<EpochLog> logs = train_teacher(model, data, opts);

    save_teacher_checkpoint(model, (dir / "teacher.ckpt").string());
    json jlog = json::array();
    for (const auto& log : logs) {
      json e;
      e["train_loss"] = log.train_loss;
      if (log.holdout_loss) e["holdout_loss"] = *log.holdout_loss;
      jlog.push_back(std::move(e));
    }
    write_json_file(dir / "train_log.json", {{"epochs", jlog}});
  });
}

void Pipeline::run_relabel() {
  const fs::path synth = out_dir_ / "synth";
  StageIo io;
  io.inputs = {synth / "corpus.jsonl", synth / "vocab.json",
               out_dir_ / "teacher" / "teacher.ckpt"};
  const fs::path dir = out_dir_ / "relabel";
  io.outputs = {dir / "labels.jsonl"};
  run_stage("relabel", io, [&] {
    const Vocabulary vocab = vocabulary();
    const auto corpus = load_dataset(
        (synth / "corpus.jsonl").string(), vocab,
        {config_.max_passage_tokens, config_.max_question_tokens});
    const TeacherModel model = load_teacher_checkpoint(
        (out_dir_ / "teacher" / "teacher.ckpt").string(), vocab.size());

    std::vector<SparseSpanLabels> labels;
    for (const auto& entry : corpus) {
      for (const auto& qa : entry.qas) {
        const SpanDistributionPair pred = teacher_predict(
            model, entry.passage.tokens, qa.question,
            config_.teacher_temperature);
        labels.push_back(make_sparse_labels(
            qa.qid, pred, entry.passage.tokens.length(), config_.teacher_topk,
            config_.teacher_renormalize));
      }
    }
    save_labels_jsonl((dir / "labels.jsonl").string(), labels);
  });
}

void Pipeline::run_distill() {
  const fs::path synth = out_dir_ / "synth";
  StageIo io;
  io.inputs = {synth / "corpus.jsonl", synth / "vocab.json",
               out_dir_ / "relabel" / "labels.jsonl"};
  const fs::path dir = out_dir_ / "distill";
  io.outputs = {dir / "student.ckpt", dir / "distill_stats.json"};
  run_stage("distill", io, [&] {
    const Vocabulary vocab = vocabulary();
    const auto corpus = load_dataset(
        (synth / "corpus.jsonl").string(), vocab,
        {config_.max_passage_tokens, config_.max_question_tokens});

    std::map<std::string, SparseSpanLabels> by_qid;
    if (config_.distill_labels == "teacher") {
      for (auto& l : load_labels_jsonl(
               (out_dir_ / "relabel" / "labels.jsonl").string()))
        by_qid[l.qid] = std::move(l);
    }

    std::vector<TrainBatch> batches;
    for (const auto& entry : corpus) {
      if (entry.qas.empty()) continue;
      TrainBatch batch;
      batch.passage = entry.passage.tokens;
      for (const auto& qa : entry.qas) {
        SparseSpanLabels labels;
        if (config_.distill_labels == "teacher") {
          auto it = by_qid.find(qa.qid);
          if (it == by_qid.end())
            throw ValidationError("distill: no teacher labels for " + qa.qid);
          labels = it->second;
        } else {
          // gold/generated: one-hot on the recorded span, [BOS] when absent
          const Span span = qa.answer_span.value_or(Span{0, 0});
          labels.qid = qa.qid;
          labels.start_entries = {{span.start, 1.0}};
          labels.end_entries = {{span.end, 1.0}};
        }
        batch.questions.emplace_back(qa.question, std::move(labels));
      }
      batches.push_back(std::move(batch));
    }
    if (batches.empty()) throw ValidationError("distill: no batches");

    EncoderConfig enc = config_.encoder;
    enc.vocab_size = vocab.size();
    StudentModel model = init_student(enc, derive_seed(config_.seed, "student"));
    DistillOptions opts;
    opts.epochs = config_.distill_epochs;
    opts.lr = config_.distill_lr;
    opts.loss = config_.distill_loss == "soft" ? DistillLossKind::soft
                                               : DistillLossKind::hard;
    opts.seed = derive_seed(config_.seed, "distill");
    const DistillStats stats = train_distill(model, batches, opts);

    save_student_checkpoint(model, (dir / "student.ckpt").string());
    json j;
    j["epoch_mean_loss"] = stats.epoch_mean_loss;
    j["passage_encodes"] = stats.passage_encodes;
    j["batches"] = batches.size();
    j["initial_agreement"] = stats.initial_agreement;
    j["final_agreement"] = stats.final_agreement;
    j["checkpoint_hash"] =
        to_hex(file_hash(dir / "student.ckpt"));
    write_json_file(dir / "distill_stats.json", j);
  });
}

json Pipeline::run_eval_qa() {
  const fs::path synth = out_dir_ / "synth";
  StageIo io;
  io.inputs = {synth / "corpus.jsonl", synth / "vocab.json",
               out_dir_ / "distill" / "student.ckpt"};
  const fs::path dir = out_dir_ / "eval_qa";
  io.outputs = {dir / "metrics.json"};
  run_stage("eval_qa", io, [&] {
    const Vocabulary vocab = vocabulary();
    const auto corpus = load_dataset(
        (synth / "corpus.jsonl").string(), vocab,
        {config_.max_passage_tokens, config_.max_question_tokens});
    const StudentModel model = load_student_checkpoint(
        (out_dir_ / "distill" / "student.ckpt").string(), vocab.size());

    double em = 0.0, f1 = 0.0;
    long n = 0;
    for (const auto& entry : corpus) {
      for (const auto& qa : entry.qas) {
        if (qa.answer_texts.empty()) continue;
        const auto [decoded, text] = answer_question(
            model, vocab, entry.passage.tokens, qa.question,
            config_.eval_max_answer_len);
        em += exact_match(text, qa.answer_texts);
        f1 += token_f1(text, qa.answer_texts);
        ++n;
      }
    }
    json j;
    j["n"] = n;
    j["exact_match"] = n == 0 ? 0.0 : em / static_cast<double>(n);
    j["token_f1"] = n == 0 ? 0.0 : f1 / static_cast<double>(n);
    write_json_file(dir / "metrics.json", j);
  });
  return read_json_file(dir / "metrics.json");
}

json Pipeline::run_eval_paraphrase() {
  const fs::path synth = out_dir_ / "synth";
  StageIo io;
  io.inputs = {synth / "paraphrase_train.jsonl", synth / "paraphrase_eval.jsonl",
               synth / "judged_pairs.jsonl", synth / "vocab.json",
               out_dir_ / "distill" / "student.ckpt"};
  const fs::path dir = out_dir_ / "eval_paraphrase";
  io.outputs = {dir / "metrics.json"};
  run_stage("eval_paraphrase", io, [&] {
    const Vocabulary vocab = vocabulary();
    const StudentModel model = load_student_checkpoint(
        (out_dir_ / "distill" / "student.ckpt").string(), vocab.size());
    const auto train =
        load_pairs_jsonl((synth / "paraphrase_train.jsonl").string(), vocab);
    const auto eval =
        load_pairs_jsonl((synth / "paraphrase_eval.jsonl").string(), vocab);
    const auto judged =
        load_pairs_jsonl((synth / "judged_pairs.jsonl").string(), vocab);

    const LayerSelection selection = select_layer(model.encoder, judged);

    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& pair : eval) {
      const LayerRepresentations r1 = encode(model.encoder, pair.s1);
      const LayerRepresentations r2 = encode(model.encoder, pair.s2);
      scores.push_back(f_bert(r1, r2, selection.layer));
      labels.push_back(pair.label.value_or(0));
    }
    const double zero_shot_auroc = auroc(scores, labels);

    // Frozen features + logistic regression.
    Matrix train_features(static_cast<Eigen::Index>(train.size()),
                          std::min(8, model.encoder.config.n_layers + 1));
    std::vector<int> train_labels;
    for (std::size_t i = 0; i < train.size(); ++i) {
      train_features.row(static_cast<Eigen::Index>(i)) =
          extract_features(model.encoder, train[i]).transpose();
      train_labels.push_back(train[i].label.value_or(0));
    }
    const LogRegModel logreg =
        train_logreg(train_features, train_labels, config_.logreg_l2_lambda);

    auto classify = [&](const EncoderParams& encoder, const LogRegModel& head) {
      long correct = 0, tp = 0, fp = 0, fn = 0;
      for (const auto& pair : eval) {
        const Vector features = extract_features(encoder, pair);
        const int pred = head.predict_prob(features) >= 0.5 ? 1 : 0;
        const int gold = pair.label.value_or(0);
        if (pred == gold) ++correct;
        if (pred == 1 && gold == 1) ++tp;
        if (pred == 1 && gold == 0) ++fp;
        if (pred == 0 && gold == 1) ++fn;
      }
      json r;
      r["accuracy"] =
          static_cast<double>(correct) / static_cast<double>(eval.size());
      const double precision =
          tp + fp == 0 ? 0.0
                       : static_cast<double>(tp) / static_cast<double>(tp + fp);
      const double recall =
          tp + fn == 0 ? 0.0
                       : static_cast<double>(tp) / static_cast<double>(tp + fn);
      r["f1"] = precision + recall == 0.0
                    ? 0.0
                    : 2.0 * precision * recall / (precision + recall);
      return r;
    };

    json j;
    j["best_layer"] = selection.layer;
    j["pearson_by_layer"] = selection.per_layer_pearson;
    j["zero_shot_auroc"] = zero_shot_auroc;
    j["frozen"] = classify(model.encoder, logreg);

    if (config_.paraphrase_finetune) {
      StudentModel tuned = model;
      FineTuneOptions opts;
      opts.epochs = config_.finetune_epochs;
      opts.lr = config_.finetune_lr;
      opts.output_lr_multiplier = config_.finetune_output_lr_multiplier;
      opts.seed = derive_seed(config_.seed, "finetune");
      const FineTuneResult result = fine_tune_paraphrase(tuned, train, opts);
      j["finetuned"] = classify(tuned.encoder, result.head);
      j["finetune_first_loss"] = result.epoch_loss.front();
      j["finetune_last_loss"] = result.epoch_loss.back();
      j["finetune_output_lr_multiplier"] = result.output_lr_multiplier;
    }
    write_json_file(dir / "metrics.json", j);
  });
  return read_json_file(dir / "metrics.json");
}

json Pipeline::run_eval_ner() {
  const fs::path synth = out_dir_ / "synth";
  StageIo io;
  io.inputs = {synth / "ner_train.jsonl", synth / "ner_eval.jsonl",
               synth / "vocab.json", out_dir_ / "distill" / "student.ckpt",
               config_.ner_prompts_path};
  const fs::path dir = out_dir_ / "eval_ner";
  io.outputs = {dir / "metrics.json"};
  run_stage("eval_ner", io, [&] {
    const Vocabulary vocab = vocabulary();
    const StudentModel base = load_student_checkpoint(
        (out_dir_ / "distill" / "student.ckpt").string(), vocab.size());
    const TagSet tags =
        TagSet::from_entity_types({"person", "location", "organization"});
    const auto train =
        load_ner_jsonl((synth / "ner_train.jsonl").string(), vocab, tags);
    const auto eval =
        load_ner_jsonl((synth / "ner_eval.jsonl").string(), vocab, tags);
    const PromptMap prompts = load_ner_prompts(config_.ner_prompts_path, vocab);

    NerTrainOptions opts;
    opts.epochs = config_.ner_epochs;
    opts.lr = config_.ner_lr;
    opts.seed = derive_seed(config_.seed, "ner");

    auto run_variant = [&](bool prompt_init) {
      StudentModel model = base;
      Matrix output = prompt_init
                          ? init_output_from_prompts(model, tags, prompts)
                          : random_output_matrix(
                                tags, model.encoder.config.d,
                                derive_seed(config_.seed, "ner-random-init"));
      const std::vector<double> losses = train_ner(model, output, train, opts);

      long tp = 0, fp = 0, fn = 0;
      for (const auto& ex : eval) {
        const std::vector<int> pred_ids =
            ner_predict_tags(model, output, ex.tokens);
        std::vector<std::string> pred_tags, gold_tags;
        for (int t : pred_ids)
          pred_tags.push_back(tags.tags[static_cast<std::size_t>(t)]);
        for (int t : ex.tags)
          gold_tags.push_back(tags.tags[static_cast<std::size_t>(t)]);
        const auto pred_entities = bio_decode(pred_tags);
        const auto gold_entities = bio_decode(gold_tags);
        for (const auto& e : pred_entities)
          if (std::find(gold_entities.begin(), gold_entities.end(), e) !=
              gold_entities.end())
            ++tp;
          else
            ++fp;
        for (const auto& e : gold_entities)
          if (std::find(pred_entities.begin(), pred_entities.end(), e) ==
              pred_entities.end())
            ++fn;
      }
      const double precision =
          tp + fp == 0 ? 0.0
                       : static_cast<double>(tp) / static_cast<double>(tp + fp);
      const double recall =
          tp + fn == 0 ? 0.0
                       : static_cast<double>(tp) / static_cast<double>(tp + fn);
      json r;
      r["start_loss"] = losses.front();
      r["final_loss"] = losses.back();
      r["loss_by_epoch"] = losses;
      r["precision"] = precision;
      r["recall"] = recall;
      r["f1"] = precision + recall == 0.0
                    ? 0.0
                    : 2.0 * precision * recall / (precision + recall);
      return r;
    };

    json j;
    j["prompt_init"] = run_variant(true);
    j["random_init"] = run_variant(false);
    j["prompt_start_loss_advantage"] =
        j["random_init"]["start_loss"].get<double>() -
        j["prompt_init"]["start_loss"].get<double>();
    write_json_file(dir / "metrics.json", j);
  });
  return read_json_file(dir / "metrics.json");
}

json Pipeline::run_eval_sentiment() {
  const fs::path synth = out_dir_ / "synth";
  StageIo io;
  io.inputs = {synth / "sentiment_eval.jsonl", synth / "vocab.json",
               out_dir_ / "distill" / "student.ckpt",
               config_.sentiment_prompts_path, config_.calibration_words_path};
  const fs::path dir = out_dir_ / "eval_sentiment";
  io.outputs = {dir / "metrics.json"};
  run_stage("eval_sentiment", io, [&] {
    const Vocabulary vocab = vocabulary();
    const StudentModel model = load_student_checkpoint(
        (out_dir_ / "distill" / "student.ckpt").string(), vocab.size());
    const auto prompts =
        load_sentiment_prompts(config_.sentiment_prompts_path, vocab);
    const auto words = load_content_free_words(config_.calibration_words_path);
    const auto examples =
        load_sentiment_jsonl((synth / "sentiment_eval.jsonl").string(), vocab);

    json per_prompt = json::array();
    double mean_accuracy = 0.0;
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      const CalibrationConstants calib =
          compute_calibration(model, prompts[p], words, vocab);
      long correct = 0;
      for (const auto& ex : examples) {
        const auto [label, margin] =
            predict_sentiment(model, ex.tokens, prompts[p], calib);
        if (label == ex.label) ++correct;
      }
      const double accuracy =
          static_cast<double>(correct) / static_cast<double>(examples.size());
      mean_accuracy += accuracy;
      json r;
      r["prompt"] = p;
      r["accuracy"] = accuracy;
      r["c0"] = calib.c0;
      r["c1"] = calib.c1;
      per_prompt.push_back(std::move(r));
    }
    mean_accuracy /= static_cast<double>(prompts.size());

    // Rationales under prompt 0 for the first few inputs.
    json rationales = json::array();
    const CalibrationConstants calib0 =
        compute_calibration(model, prompts[0], words, vocab);
    for (std::size_t i = 0; i < std::min<std::size_t>(5, examples.size());
         ++i) {
      const auto [label, margin] =
          predict_sentiment(model, examples[i].tokens, prompts[0], calib0);
      const TokenSequence& winning =
          label == 1 ? prompts[0].positive : prompts[0].negative;
      const auto [span, text] =
          extract_rationale(model, vocab, examples[i].tokens, winning);
      json r;
      r["input"] = detokenize(examples[i].tokens, vocab);
      r["predicted_label"] = label;
      r["rationale"] = text;
      r["rationale_span"] = {span.start, span.end};
      rationales.push_back(std::move(r));
    }

    json j;
    j["mean_accuracy"] = mean_accuracy;
    j["per_prompt"] = std::move(per_prompt);
    j["rationales"] = std::move(rationales);
    j["word_list"] = words.id;
    write_json_file(dir / "metrics.json", j);
  });
  return read_json_file(dir / "metrics.json");
}

json Pipeline::run_all() {
  RunLock lock(out_dir_);
  const auto t0 = std::chrono::steady_clock::now();
  json report;
  report["run_id"] = to_hex(config_.config_hash());
  report["config_hash"] = to_hex(config_.config_hash());

  std::string current = "synth";
  try {
    run_synth();
    current = "teacher";
    run_teacher();
    current = "relabel";
    run_relabel();
    current = "distill";
    run_distill();
    current = "eval_qa";
    json metrics;
    metrics["qa"] = run_eval_qa();
    current = "eval_paraphrase";
    metrics["paraphrase"] = run_eval_paraphrase();
    current = "eval_ner";
    metrics["ner"] = run_eval_ner();
    current = "eval_sentiment";
    metrics["sentiment"] = run_eval_sentiment();
    report["metrics"] = std::move(metrics);
    report["distill"] =
        read_json_file(out_dir_ / "distill" / "distill_stats.json");
  } catch (const std::exception& e) {
    report["failed_stage"] = current;
    report["error"] = e.what();
    const auto elapsed = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    report["timing"] = {{"wall_clock_seconds", elapsed}};
    write_json_file(out_dir_ / "report.json", report);
    throw;
  }

  const auto elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  json timing;
  timing["wall_clock_seconds"] = elapsed;
  json execs = json::object();
  for (const auto& [stage, count] : executions_) execs[stage] = count;
  timing["stage_executions"] = std::move(execs);
  report["timing"] = std::move(timing);
  write_json_file(out_dir_ / "report.json", report);
  return report;
}

void verify_report(const fs::path& report_path, const RunConfig& config) {
  const json report = read_json_file(report_path);
  if (!report.contains("config_hash"))
    throw ValidationError("report: missing config hash");
  if (report["config_hash"].get<std::string>() != to_hex(config.config_hash()))
    throw ValidationError("report: config hash mismatch (tampered config?)");
}

json strip_timing(json report) {
  report.erase("timing");
  return report;
}

}  // namespace qap
