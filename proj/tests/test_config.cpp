#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "icl/config.hpp"
#include "icl/error.hpp"

using namespace icl;

TEST(Config, DefaultsValidate) {
  ExperimentConfig c;
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(c.topics * c.classes, 100);
  EXPECT_EQ(c.prefix_len(150), 105);
  EXPECT_EQ(c.suffix_len(150), 45);
  EXPECT_EQ(c.prefix_len(2), 1);
}

TEST(Config, ParseOverridesBase) {
  auto c = parse_config(R"(
# comment
topics = 4
mask_prob = 0.2   # trailing comment
topic_mode = key-biased
theorem_n = 1, 5,9
train_fresh_concepts = false
family = configs/low_margin.family
)");
  EXPECT_EQ(c.topics, 4);
  EXPECT_EQ(c.classes, 10);
  EXPECT_DOUBLE_EQ(c.mask_prob, 0.2);
  EXPECT_EQ(c.topic_mode, TopicMode::KeyBiased);
  EXPECT_EQ(c.theorem_n, (std::vector<int>{1, 5, 9}));
  EXPECT_FALSE(c.train_fresh_concepts);
  EXPECT_EQ(c.family, "configs/low_margin.family");
}

TEST(Config, RoundTrip) {
  ExperimentConfig c;
  c.mask_prob = 0.123456789012345;
  c.theorem_H = {2, 3};
  c.claim1_topic_mode = TopicMode::KeyBiased;
  auto back = parse_config(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(back.mask_prob, c.mask_prob);
  const std::string text = to_text(c);
  EXPECT_EQ(config_keys().size(), static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST(Config, CollectsEveryParseProblem) {
  try {
    parse_config("topics = x\nbogus = 1\nno equals sign\nmask_prob = 0.1.2\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    ASSERT_EQ(e.problems().size(), 4u);
    EXPECT_NE(e.problems()[0].find("topics"), std::string::npos);
    EXPECT_NE(e.problems()[1].find("bogus"), std::string::npos);
  }
}

TEST(Config, ValidationNamesFields) {
  ExperimentConfig c;
  c.mask_prob = 1.0;
  c.tau = 11;
  c.key_class_prob = 0.05;
  c.theorem_n1 = {0};
  try {
    validate(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    std::string all;
    for (const auto& p : e.problems()) all += p + "\n";
    for (const char* field : {"mask_prob", "tau", "key_class_prob", "theorem_n1"})
      EXPECT_NE(all.find(field), std::string::npos) << field;
  }
  c = ExperimentConfig{};
  c.prefix_frac = 0.6;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Config, LoadFile) {
  const auto path = std::filesystem::temp_directory_path() / "icl_config_test.cfg";
  std::ofstream(path) << "classes = 7\n";
  EXPECT_EQ(load_config(path.string()).classes, 7);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path.string()), ConfigError);
}
