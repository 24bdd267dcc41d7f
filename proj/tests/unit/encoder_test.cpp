#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <unistd.h>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gradient_oracle.hpp"
#include "pemi/encoder.hpp"
#include "pemi/prompt_template.hpp"

namespace pemi {
namespace {

namespace fs = std::filesystem;

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.vocab_size = 30;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 24;
  c.seed = 5;
  return c;
}

// [P P a1 a1 a1 MASK SEP a2 a2 P P P], 12 tokens, K = 5.
ModifiedInput length_twelve_input() {
  ModifiedInput in;
  in.token_ids = {0, 0, 10, 11, 12, Vocab::kMask, Vocab::kSep, 13, 14, 0, 0, 0};
  in.prompt_positions = {0, 1, 9, 10, 11};
  in.mask_position = 5;
  in.sep_position = 6;
  in.arg1 = {2, 3};
  in.arg2 = {7, 2};
  return in;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(EncoderConfigTest, RejectsIndivisibleHeads) {
  EncoderConfig c = tiny_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InitEncoderTest, SameSeedGivesBitIdenticalParameters) {
  const auto a = init_encoder<float>(tiny_config());
  const auto b = init_encoder<float>(tiny_config());
  std::vector<TensorF> pa, pb;
  a.for_each_parameter([&](const std::string&, const TensorF& t) { pa.push_back(t); });
  b.for_each_parameter([&](const std::string&, const TensorF& t) { pb.push_back(t); });
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bitwise_equal(pa[i], pb[i]));
}

TEST(InitEncoderTest, EveryParameterIsFrozenAndNamedOnce) {
  const auto model = init_encoder<float>(tiny_config());
  std::set<std::string> names;
  std::size_t count = 0;
  model.for_each_parameter([&](const std::string& name, const TensorF& t) {
    EXPECT_FALSE(t.requires_grad()) << name;
    names.insert(name);
    ++count;
  });
  EXPECT_EQ(names.size(), count);
  EXPECT_EQ(count, 4u + 2u * 16u + 4u);
}

TEST(InitEncoderTest, ParameterCountMatchesHandCount) {
  // V=30, L=24, d=16, f=32, two layers:
  //   embeddings 30*16 + 24*16 + 2*16            = 896
  //   per layer  4*(256+16) + (512+32+512+16) + 64 = 2224
  //   head       256 + 16 + 32                    = 304
  const std::size_t hand = 896 + 2 * 2224 + 304;
  EXPECT_EQ(encoder_parameter_count(tiny_config()), hand);
  EXPECT_EQ(init_encoder<float>(tiny_config()).parameter_count(), hand);
}

TEST(ForwardTest, SmokeLengthTwelve) {
  const auto model = init_encoder<float>(tiny_config());
  Rng rng(1);
  const auto prompts = testing::random_tensor<float>(rng, {5, 16}, 0.02);
  const auto trace = forward(model, length_twelve_input(), prompts);
  EXPECT_EQ(trace.h_mask.shape(), (Shape{16}));
  EXPECT_EQ(trace.h_prime.shape(), (Shape{16}));
  EXPECT_TRUE(trace.h_mask.all_finite());
  EXPECT_TRUE(bitwise_equal(trace.h_prime, head_transform(model, trace.h_mask)));
}

TEST(ForwardTest, NoPromptsIsPlainMlmForward) {
  const auto model = init_encoder<float>(tiny_config());
  ModifiedInput in;
  in.token_ids = {10, 11, Vocab::kMask, Vocab::kSep, 12};
  in.mask_position = 2;
  in.sep_position = 3;
  const auto trace = forward(model, in, TensorF::zeros({0, 16}));
  EXPECT_TRUE(trace.h_prime.all_finite());
}

TEST(ForwardTest, PromptRowChangesMaskState) {
  const auto model = init_encoder<float>(tiny_config());
  Rng rng(2);
  const auto prompts = testing::random_tensor<float>(rng, {5, 16}, 0.5);
  std::vector<float> moved = prompts.to_vector();
  moved[3 * 16 + 5] += 0.7f;
  const auto base = forward(model, length_twelve_input(), prompts);
  const auto shifted = forward(model, length_twelve_input(), TensorF({5, 16}, moved));
  double diff = 0.0;
  for (std::size_t i = 0; i < 16; ++i) diff += std::abs(base.h_mask[i] - shifted.h_mask[i]);
  EXPECT_GT(diff, 0.0);
}

TEST(ForwardTest, PromptGradientMatchesFiniteDifferences) {
  const auto model = init_encoder<float>(tiny_config()).cast<double>();
  Rng rng(3);
  const auto input = length_twelve_input();
  std::vector<TensorD> leaves{testing::random_tensor<double>(rng, {5, 16}, 0.5),
                              testing::random_tensor<double>(rng, {1, 16})};
  const double err = testing::worst_gradient_error<double>(leaves, [&](Tape<double>& t, const std::vector<Var>& v) {
    return dot(t, encode(t, model, input, v[0]).h_prime, v[1]);
  });
  EXPECT_LT(err, 1e-4);
}

TEST(ForwardTest, RejectsMissingOrRepeatedMask) {
  const auto model = init_encoder<float>(tiny_config());
  ModifiedInput in;
  in.token_ids = {10, 11, Vocab::kSep, 12};
  EXPECT_THROW(forward(model, in, TensorF::zeros({0, 16})), TemplateError);
  in.token_ids = {10, Vocab::kMask, Vocab::kMask, 12};
  in.mask_position = 1;
  EXPECT_THROW(forward(model, in, TensorF::zeros({0, 16})), TemplateError);
}

TEST(ForwardTest, RejectsOverlongSequence) {
  const auto model = init_encoder<float>(tiny_config());
  ModifiedInput in;
  in.token_ids.assign(25, 10);
  in.token_ids[3] = Vocab::kMask;
  in.mask_position = 3;
  EXPECT_THROW(forward(model, in, TensorF::zeros({0, 16})), LengthError);
}

TEST(ForwardTest, PromptPositionToggleChangesOutput) {
  EncoderConfig c = tiny_config();
  const auto keep = init_encoder<float>(c);
  c.prompt_positions = false;
  const auto zeroed = init_encoder<float>(c);
  Rng rng(4);
  const auto prompts = testing::random_tensor<float>(rng, {5, 16}, 0.02);
  const auto a = forward(keep, length_twelve_input(), prompts);
  const auto b = forward(zeroed, length_twelve_input(), prompts);
  EXPECT_FALSE(bitwise_equal(a.h_mask, b.h_mask));
}

TEST(HeadTransformTest, OutputIsLayerNormalized) {
  const auto model = init_encoder<float>(tiny_config());
  Rng rng(6);
  const auto h = head_transform(model, testing::random_tensor<float>(rng, {16}));
  ASSERT_EQ(h.size(), 16u);
  // Gain 1 and bias 0 at init, so the output itself has mean 0 and variance ~1.
  double mean = 0.0, var = 0.0;
  for (float v : h.values()) mean += v;
  mean /= 16.0;
  for (float v : h.values()) var += (v - mean) * (v - mean);
  var /= 16.0;
  EXPECT_NEAR(mean, 0.0, 1e-5);
  EXPECT_NEAR(var, 1.0, 1e-2);
}

TEST(InitEncoderTest, NormalWeightsScaleWithInitStd) {
  auto spread = [](double std) {
    EncoderConfig c = tiny_config();
    c.init_std = std;
    const auto v = init_encoder<float>(c).token_embedding.to_vector();
    double ss = 0.0;
    for (float x : v) ss += double(x) * x;
    return std::sqrt(ss / static_cast<double>(v.size()));
  };
  EXPECT_NEAR(spread(0.02), 0.02, 0.002);
  EXPECT_NEAR(spread(0.125), 0.125, 0.0125);
  EncoderConfig bad = tiny_config();
  bad.init_std = 0.0;
  EXPECT_THROW(init_encoder<float>(bad), ConfigError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("pemi_encoder_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  const auto model = init_encoder<float>(tiny_config());
  save_weights(model, (dir_ / "a.bin").string());
  const auto loaded = load_weights((dir_ / "a.bin").string());
  save_weights(loaded, (dir_ / "b.bin").string());
  EXPECT_EQ(read_bytes(dir_ / "a.bin"), read_bytes(dir_ / "b.bin"));
  EXPECT_EQ(read_bytes(dir_ / "a.bin").substr(0, 8), "PEMI-ENC");
  EXPECT_EQ(loaded.config, model.config);
}

TEST_F(CheckpointTest, LoadedModelForwardsIdentically) {
  const auto model = init_encoder<float>(tiny_config());
  save_weights(model, (dir_ / "m.bin").string());
  const auto loaded = load_weights((dir_ / "m.bin").string());
  Rng rng(8);
  const auto prompts = testing::random_tensor<float>(rng, {5, 16}, 0.3);
  const auto a = forward(model, length_twelve_input(), prompts);
  const auto b = forward(loaded, length_twelve_input(), prompts);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(a.h_prime[i], b.h_prime[i]);
}

TEST_F(CheckpointTest, WrongDModelIsACheckpointError) {
  save_weights(init_encoder<float>(tiny_config()), (dir_ / "m.bin").string());
  EncoderConfig other = tiny_config();
  other.d_model = 32;
  try {
    load_weights((dir_ / "m.bin").string(), other);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("d_model"), std::string::npos);
  }
}

TEST_F(CheckpointTest, ShapeMismatchNamesTheArray) {
  auto model = init_encoder<float>(tiny_config());
  ArrayFile file;
  file.magic = kEncoderMagic;
  file.header = encoder_header(model.config);
  model.for_each_parameter([&](const std::string& name, const TensorF& t) {
    file.arrays.push_back(NamedArray{name, name == "layer1.ffn.w2" ? TensorF::zeros({3, 3}) : t});
  });
  write_array_file((dir_ / "bad.bin").string(), file);
  try {
    load_weights((dir_ / "bad.bin").string());
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("layer1.ffn.w2"), std::string::npos);
  }
}

TEST_F(CheckpointTest, InitStdSurvivesTheRoundTrip) {
  EncoderConfig c = tiny_config();
  c.init_std = 0.125;
  save_weights(init_encoder<float>(c), (dir_ / "s.bin").string());
  EXPECT_EQ(load_weights((dir_ / "s.bin").string()).config.init_std, 0.125);
  EXPECT_THROW(load_weights((dir_ / "s.bin").string(), tiny_config()), CheckpointError);
}

TEST_F(CheckpointTest, WrongMagicIsRejected) {
  std::ofstream(dir_ / "junk.bin") << "NOT-A-CHECKPOINT";
  EXPECT_THROW(load_weights((dir_ / "junk.bin").string()), CheckpointError);
}

}  // namespace
}  // namespace pemi
