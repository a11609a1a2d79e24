#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "cmvf/errors.hpp"
#include "cmvf/metrics.hpp"
#include "cmvf/trainer.hpp"
#include "support/test_support.hpp"

using namespace cmvf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cmvf_trainer_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

Dataset small_train_split() {
  SynthConfig cfg;
  cfg.students = 60;
  cfg.questions = 40;
  cfg.concepts = 8;
  cfg.max_length = 30;
  SynthResult synth = synthesize(cfg, 23);
  auto [train, test] = split_per_student(synth.dataset, 0.8);
  return train;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.embedding_dim = 8;
  cfg.capsule_count = 4;
  cfg.batch_size = 256;
  cfg.learning_rate = 3e-3;
  cfg.max_epochs = 6;
  cfg.patience = 6;
  cfg.seed = 7;
  return cfg;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  auto ea = a.entries();
  auto eb = b.entries();
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    if (!ea[i].second->same_shape(*eb[i].second)) return false;
    for (std::size_t j = 0; j < ea[i].second->size(); ++j) {
      if ((*ea[i].second)[j] != (*eb[i].second)[j]) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("init_params: determinism, xavier variance, zero biases") {
  ModelDims dims{10, 12, 6, 64, 4};
  ModelParams a = init_params(dims, 42);
  ModelParams b = init_params(dims, 42);
  CHECK(params_equal(a, b));
  ModelParams c = init_params(dims, 43);
  CHECK(!params_equal(a, c));

  // sample variance of a 64x64 xavier matrix: 2 / (64 + 64)
  const Array& w = a.head_student.w_mu;
  REQUIRE(w.size() == 64 * 64);
  double mean = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) mean += w[i];
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) var += (w[i] - mean) * (w[i] - mean);
  var /= static_cast<double>(w.size() - 1);
  double expected = 2.0 / 128.0;
  CHECK(var > expected * 0.8);
  CHECK(var < expected * 1.2);

  for (const Array* bias : {&a.lstm_b, &a.head_student.b_mu, &a.head_question.b_lv, &a.pred_b1,
                            &a.pred_b2}) {
    for (std::size_t i = 0; i < bias->size(); ++i) CHECK((*bias)[i] == 0.0);
  }

  CHECK_THROWS_AS(init_params(ModelDims{0, 1, 1, 4, 2}, 1), ValidationError);
}

TEST_CASE("adam_step: zero gradients leave parameters unchanged") {
  ModelDims dims{3, 4, 3, 4, 2};
  ModelParams params = init_params(dims, 5);
  ModelParams before = params;
  ModelParams grads = zeros_like(params);
  OptimizerState state = init_optimizer(params);
  adam_step(params, grads, state, 0.01);
  CHECK(state.step_count == 1);
  CHECK(params_equal(params, before));
  for (const Array& m : state.first_moment) {
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == 0.0);
  }
}

TEST_CASE("adam_step: first step moves by ~lr * sign(gradient)") {
  ModelDims dims{3, 4, 3, 4, 2};
  ModelParams params = init_params(dims, 6);
  ModelParams before = params;
  ModelParams grads = zeros_like(params);
  for (auto& [name, arr] : grads.entries()) arr->fill(0.37);
  OptimizerState state = init_optimizer(params);
  double lr = 0.01;
  adam_step(params, grads, state, lr);
  auto pb = before.entries();
  auto pa = params.entries();
  for (std::size_t e = 0; e < pa.size(); ++e) {
    for (std::size_t i = 0; i < pa[e].second->size(); ++i) {
      double delta = (*pa[e].second)[i] - (*pb[e].second)[i];
      CHECK(delta == doctest::Approx(-lr).epsilon(1e-6));
    }
  }
}

TEST_CASE("adam_step: two steps match the scalar transcript") {
  ModelDims dims{2, 3, 2, 4, 2};
  ModelParams params = init_params(dims, 7);
  for (auto& [name, arr] : params.entries()) arr->fill(0.5);
  ModelParams grads = zeros_like(params);
  OptimizerState state = init_optimizer(params);

  test::ScalarAdam oracle;
  double x = 0.5;
  double lr = 0.02;
  x = oracle.step(x, 0.3, lr);
  for (auto& [name, arr] : grads.entries()) arr->fill(0.3);
  adam_step(params, grads, state, lr);
  x = oracle.step(x, -0.2, lr);
  for (auto& [name, arr] : grads.entries()) arr->fill(-0.2);
  adam_step(params, grads, state, lr);

  CHECK(state.step_count == 2);
  for (auto& [name, arr] : params.entries()) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      CHECK((*arr)[i] == doctest::Approx(x).epsilon(1e-15));
    }
  }
}

TEST_CASE("adam_step aborts on a non-finite gradient, naming the parameter") {
  ModelDims dims{2, 3, 2, 4, 2};
  ModelParams params = init_params(dims, 8);
  ModelParams grads = zeros_like(params);
  grads.lstm_wh[3] = std::nan("");
  OptimizerState state = init_optimizer(params);
  try {
    adam_step(params, grads, state, 0.01);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("lstm_wh") != std::string::npos);
  }
}

TEST_CASE("carve_validation: floor rule with minimums") {
  Dataset train = small_train_split();
  ValidationSplit split = carve_validation(train, 0.1);
  CHECK(!split.train_records.empty());
  CHECK(!split.valid_records.empty());
  CHECK(split.valid_records.size() == split.valid_labels.size());

  std::vector<std::size_t> valid_per_student(train.sequences.size(), 0);
  for (const RecordRef& r : split.valid_records) valid_per_student[r.student] += 1;
  for (const StudentSequence& seq : train.sequences) {
    std::size_t n = seq.events.size();
    std::size_t expected =
        n >= 3 ? std::min<std::size_t>(
                     std::max<std::size_t>(1, static_cast<std::size_t>(0.1 * n)), n - 2)
               : 0;
    CHECK(valid_per_student[seq.student] == expected);
  }
}

TEST_CASE("training reduces the loss and improves on chance") {
  Dataset train = small_train_split();
  TrainConfig cfg = small_config();
  TrainResult result = train_model(train, cfg);

  REQUIRE(result.history.size() >= 2);
  CHECK(result.history.back().loss.total < result.history.front().loss.total);
  CHECK(result.best.best_auc > 0.55);
  CHECK(result.best.best_epoch >= 1);

  // every parameter array received gradient during the first epoch
  CHECK(result.dead_params.empty());
}

TEST_CASE("same seed, same run: loss curves and checkpoints are identical") {
  Dataset train = small_train_split();
  TrainConfig cfg = small_config();
  cfg.max_epochs = 3;
  TrainResult a = train_model(train, cfg);
  TrainResult b = train_model(train, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].loss.total == b.history[i].loss.total);
    CHECK(a.history[i].valid_auc == b.history[i].valid_auc);
  }
  CHECK(params_equal(a.last.params, b.last.params));
  CHECK(params_equal(a.best.params, b.best.params));
}

TEST_CASE("checkpoint round-trip restores bit-identical state") {
  TempDir tmp;
  Dataset train = small_train_split();
  TrainConfig cfg = small_config();
  cfg.max_epochs = 2;
  TrainResult result = train_model(train, cfg);

  std::string path = tmp.file("ck.bin");
  save_checkpoint(result.best, path);
  Checkpoint loaded = load_checkpoint(path);

  CHECK(params_equal(loaded.params, result.best.params));
  CHECK(loaded.optimizer.step_count == result.best.optimizer.step_count);
  CHECK(loaded.config == result.best.config);
  CHECK(loaded.best_auc == result.best.best_auc);
  REQUIRE(loaded.history.size() == result.best.history.size());
  for (std::size_t i = 0; i < loaded.history.size(); ++i) {
    CHECK(loaded.history[i].valid_auc == result.best.history[i].valid_auc);
    CHECK(loaded.history[i].loss.total == result.best.history[i].loss.total);
  }
  for (std::size_t e = 0; e < loaded.optimizer.first_moment.size(); ++e) {
    const Array& m = loaded.optimizer.first_moment[e];
    const Array& m0 = result.best.optimizer.first_moment[e];
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == m0[i]);
  }

  // forward pass on a fixed batch is bit-identical
  ValidationSplit split = carve_validation(train, cfg.valid_fraction);
  ObjectiveConfig obj = cfg.objective();
  std::vector<double> before = predict_records(result.best.params, train,
                                               split.valid_records, obj);
  std::vector<double> after = predict_records(loaded.params, train, split.valid_records, obj);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("checkpoint load rejects corrupt files") {
  TempDir tmp;
  Dataset train = small_train_split();
  TrainConfig cfg = small_config();
  cfg.max_epochs = 1;
  TrainResult result = train_model(train, cfg);
  std::string path = tmp.file("ck.bin");
  save_checkpoint(result.best, path);

  auto mutate = [&](const std::string& out, auto fn) {
    std::ifstream in(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    fn(buf);
    std::ofstream o(out, std::ios::binary);
    o << buf;
  };

  // version mismatch is named explicitly
  mutate(tmp.file("ver.bin"), [](std::string& b) { b[8] = 9; });
  try {
    load_checkpoint(tmp.file("ver.bin"));
    FAIL("expected IoError");
  } catch (const IoError& e) {
    std::string msg = e.what();
    CHECK(msg.find("version 9") != std::string::npos);
    CHECK(msg.find("version 1") != std::string::npos);
  }

  // truncation fails the integrity check
  mutate(tmp.file("trunc.bin"), [](std::string& b) { b.resize(b.size() - 100); });
  CHECK_THROWS_AS(load_checkpoint(tmp.file("trunc.bin")), IoError);

  // payload corruption fails the integrity check
  mutate(tmp.file("flip.bin"), [](std::string& b) { b[b.size() / 2] ^= 0x40; });
  CHECK_THROWS_AS(load_checkpoint(tmp.file("flip.bin")), IoError);

  CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.bin")), IoError);
}

TEST_CASE("resuming mid-run reproduces the uninterrupted run exactly") {
  TempDir tmp;
  Dataset train = small_train_split();
  TrainConfig cfg = small_config();
  cfg.max_epochs = 3;
  TrainResult full = train_model(train, cfg);

  TrainConfig cfg2 = cfg;
  cfg2.max_epochs = 2;
  TrainResult partial = train_model(train, cfg2);
  std::string path = tmp.file("mid.bin");
  save_checkpoint(partial.last, path);
  Checkpoint reloaded = load_checkpoint(path);
  TrainResult resumed = train_model(train, cfg, reloaded);

  REQUIRE(resumed.history.size() == full.history.size());
  for (std::size_t i = 0; i < full.history.size(); ++i) {
    CHECK(resumed.history[i].loss.total == full.history[i].loss.total);
    CHECK(resumed.history[i].valid_auc == full.history[i].valid_auc);
  }
  CHECK(resumed.best.best_auc == full.best.best_auc);
  CHECK(resumed.best.best_epoch == full.best.best_epoch);
  CHECK(params_equal(resumed.last.params, full.last.params));
}

TEST_CASE("a non-finite state aborts training with the last good epoch named") {
  Dataset train = small_train_split();
  TrainConfig cfg = small_config();
  cfg.max_epochs = 1;
  TrainResult result = train_model(train, cfg);

  Checkpoint poisoned = result.last;
  poisoned.params.student_emb[0] = std::numeric_limits<double>::infinity();
  TrainConfig extended = cfg;
  extended.max_epochs = 3;
  try {
    train_model(train, extended, poisoned);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
  }
}

TEST_CASE("eval on the validation split reproduces the stored best AUC") {
  Dataset train = small_train_split();
  TrainConfig cfg = small_config();
  TrainResult result = train_model(train, cfg);

  ValidationSplit split = carve_validation(train, cfg.valid_fraction);
  std::vector<double> preds =
      predict_records(result.best.params, train, split.valid_records, cfg.objective());
  double valid_auc = auc(preds, split.valid_labels);
  CHECK(valid_auc == result.best.best_auc);
}
