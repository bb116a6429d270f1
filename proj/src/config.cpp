#include "icl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <utility>
#include <variant>

#include "icl/error.hpp"

namespace icl {
namespace {

using C = ExperimentConfig;
using Member = std::variant<int C::*, double C::*, bool C::*, std::string C::*, TopicMode C::*,
                            std::vector<int> C::*>;

const std::vector<std::pair<std::string, Member>>& fields() {
  static const std::vector<std::pair<std::string, Member>> table = {
      {"topics", &C::topics},
      {"classes", &C::classes},
      {"tau", &C::tau},
      {"seq_len_min", &C::seq_len_min},
      {"seq_len_max", &C::seq_len_max},
      {"prompt_seq_len", &C::prompt_seq_len},
      {"key_class_prob", &C::key_class_prob},
      {"mask_prob", &C::mask_prob},
      {"prefix_frac", &C::prefix_frac},
      {"suffix_frac", &C::suffix_frac},
      {"contexts", &C::contexts},
      {"gamma", &C::gamma},
      {"train_count", &C::train_count},
      {"query_count", &C::query_count},
      {"topic_mode", &C::topic_mode},
      {"key_topic_prob", &C::key_topic_prob},
      {"target_topic", &C::target_topic},
      {"claim1_seq_len", &C::claim1_seq_len},
      {"claim1_trials", &C::claim1_trials},
      {"claim1_topic_mode", &C::claim1_topic_mode},
      {"train_seq_len", &C::train_seq_len},
      {"train_steps", &C::train_steps},
      {"train_lambda", &C::train_lambda},
      {"train_lr", &C::train_lr},
      {"train_fresh_concepts", &C::train_fresh_concepts},
      {"ablation_seq_len", &C::ablation_seq_len},
      {"ablation_train", &C::ablation_train},
      {"ablation_valid", &C::ablation_valid},
      {"ablation_steps", &C::ablation_steps},
      {"ablation_lr", &C::ablation_lr},
      {"ablation_lambda", &C::ablation_lambda},
      {"ablation_init_scale", &C::ablation_init_scale},
      {"ablation_eval_every", &C::ablation_eval_every},
      {"family", &C::family},
      {"theorem_n1", &C::theorem_n1},
      {"theorem_H", &C::theorem_H},
      {"theorem_n", &C::theorem_n},
      {"theorem_trials", &C::theorem_trials},
      {"epsilon_samples", &C::epsilon_samples},
      {"prompt_dim", &C::prompt_dim},
  };
  return table;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_int(const std::string& s, int& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && p == end;
}

bool parse_double(const std::string& s, double& out) {
  std::istringstream in(s);
  in >> out;
  return in && (in >> std::ws).eof();
}

// Returns an error message, empty on success.
std::string assign(C& c, const Member& m, const std::string& value) {
  return std::visit(
      [&](auto ptr) -> std::string {
        using T = std::remove_reference_t<decltype(c.*ptr)>;
        T& slot = c.*ptr;
        if constexpr (std::is_same_v<T, int>) {
          return parse_int(value, slot) ? "" : "expected an integer";
        } else if constexpr (std::is_same_v<T, double>) {
          return parse_double(value, slot) ? "" : "expected a number";
        } else if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1") slot = true;
          else if (value == "false" || value == "0") slot = false;
          else return "expected true or false";
          return "";
        } else if constexpr (std::is_same_v<T, std::string>) {
          slot = value;
          return "";
        } else if constexpr (std::is_same_v<T, TopicMode>) {
          try {
            slot = topic_mode_from_string(value);
          } catch (const std::exception&) {
            return "expected uniform or key_biased";
          }
          return "";
        } else {
          std::vector<int> items;
          std::stringstream in(value);
          std::string part;
          while (std::getline(in, part, ',')) {
            int v;
            if (!parse_int(trim(part), v)) return "expected a comma-separated integer list";
            items.push_back(v);
          }
          if (items.empty()) return "expected a non-empty list";
          slot = std::move(items);
          return "";
        }
      },
      m);
}

std::string render(const C& c, const Member& m) {
  return std::visit(
      [&](auto ptr) -> std::string {
        using T = std::remove_cvref_t<decltype(c.*ptr)>;
        const T& v = c.*ptr;
        if constexpr (std::is_same_v<T, int>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          char buf[32];
          const auto res = std::to_chars(buf, buf + sizeof buf, v);
          return std::string(buf, res.ptr);
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return v;
        } else if constexpr (std::is_same_v<T, TopicMode>) {
          return std::string(to_string(v));
        } else {
          std::string out;
          for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
          return out;
        }
      },
      m);
}

}  // namespace

int ExperimentConfig::prefix_len(int seq_len) const {
  const int l1 = static_cast<int>(std::lround(prefix_frac * seq_len));
  return std::clamp(l1, 1, std::max(1, seq_len - 1));
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  std::vector<std::string> problems;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = "line " + std::to_string(line_no);
    if (eq == std::string::npos) {
      problems.push_back(where + ": expected 'key = value'");
      continue;
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    if (it == table.end()) {
      problems.push_back(where + ": unknown key '" + key + "'");
      continue;
    }
    if (auto err = assign(base, it->second, value); !err.empty())
      problems.push_back(key + " (" + where + "): " + err);
  }
  if (!problems.empty()) throw ConfigError(problems);
  return base;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void validate(const ExperimentConfig& c) {
  std::vector<std::string> p;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) p.push_back(msg);
  };
  need(c.topics >= 2, "topics: must be >= 2");
  need(c.classes >= 2, "classes: must be >= 2");
  need(c.tau >= 1 && c.tau <= c.topics, "tau: must lie in [1, topics]");
  need(c.seq_len_min >= 2, "seq_len_min: must be >= 2");
  need(c.seq_len_max >= c.seq_len_min, "seq_len_max: must be >= seq_len_min");
  need(c.prompt_seq_len >= 2, "prompt_seq_len: must be >= 2");
  need(c.key_class_prob > 1.0 / c.classes && c.key_class_prob <= 1.0,
       "key_class_prob: must lie in (1/classes, 1]");
  need(c.mask_prob > 0.0 && c.mask_prob < 1.0, "mask_prob: must lie in (0, 1)");
  need(c.prefix_frac > 0.0 && c.prefix_frac < 1.0, "prefix_frac: must lie in (0, 1)");
  need(c.suffix_frac > 0.0 && c.suffix_frac < 1.0, "suffix_frac: must lie in (0, 1)");
  need(std::abs(c.prefix_frac + c.suffix_frac - 1.0) < 1e-9, "prefix_frac + suffix_frac: must equal 1");
  need(c.contexts >= 1, "contexts: must be >= 1");
  need(c.gamma > 0.0 && c.gamma < 1.0, "gamma: must lie in (0, 1)");
  need(c.train_count >= 1, "train_count: must be >= 1");
  need(c.query_count >= 1, "query_count: must be >= 1");
  need(c.key_topic_prob >= 0.0 && c.key_topic_prob <= 1.0, "key_topic_prob: must lie in [0, 1]");
  need(c.target_topic >= 0 && c.target_topic <= c.topics, "target_topic: must be 0 or a topic in [1, topics]");
  need(c.claim1_seq_len >= 2, "claim1_seq_len: must be >= 2");
  need(c.claim1_trials >= 1, "claim1_trials: must be >= 1");
  need(c.train_seq_len == 0 || c.train_seq_len >= 2, "train_seq_len: must be 0 or >= 2");
  need(c.train_steps >= 1, "train_steps: must be >= 1");
  need(c.train_lambda >= 0.0, "train_lambda: must be >= 0");
  need(c.train_lr >= 0.0, "train_lr: must be >= 0 (0 selects the step automatically)");
  need(c.ablation_seq_len >= 2, "ablation_seq_len: must be >= 2");
  need(c.ablation_train >= 1, "ablation_train: must be >= 1");
  need(c.ablation_valid >= 1, "ablation_valid: must be >= 1");
  need(c.ablation_steps >= 1, "ablation_steps: must be >= 1");
  need(c.ablation_lr >= 0.0, "ablation_lr: must be >= 0");
  need(c.ablation_lambda >= 0.0, "ablation_lambda: must be >= 0");
  need(c.ablation_init_scale > 0.0, "ablation_init_scale: must be > 0");
  need(c.ablation_eval_every >= 1, "ablation_eval_every: must be >= 1");
  auto positive_list = [&](const std::vector<int>& v, const char* name) {
    need(!v.empty() && std::all_of(v.begin(), v.end(), [](int x) { return x >= 1; }),
         std::string(name) + ": every entry must be >= 1");
  };
  positive_list(c.theorem_n1, "theorem_n1");
  positive_list(c.theorem_H, "theorem_H");
  positive_list(c.theorem_n, "theorem_n");
  need(c.theorem_trials >= 1, "theorem_trials: must be >= 1");
  need(c.epsilon_samples >= 1, "epsilon_samples: must be >= 1");
  need(c.prompt_dim >= 1, "prompt_dim: must be >= 1");
  if (!p.empty()) throw ConfigError(p);
}

std::string to_text(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [key, member] : fields()) out += key + " = " + render(c, member) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.first);
  return keys;
}

}  // namespace icl
