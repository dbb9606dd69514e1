#pragma once

// Procedural corpora: vocabulary with token roles, the template grammar that
// generates procedures, the exact next-action oracle, and JSONL corpus files.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace stepcast {

enum class Role { Verb, Ingredient, Other, Bos, Eos, Pad };

std::string_view role_name(Role r);

struct Token {
  std::string surface;
  Role role = Role::Other;

  bool operator==(const Token&) const = default;
};

struct Step {
  std::vector<Token> tokens;
  std::string action_id;

  bool operator==(const Step&) const = default;
};

struct Procedure {
  std::vector<int> ingredients;  // sorted, unique indices into the ingredient vocabulary
  std::vector<Step> steps;
  std::string recipe_type;

  bool operator==(const Procedure&) const = default;
};

/// Token table. Ids 0, 1, 2 are PAD, BOS and EOS; grammar words follow.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  Vocabulary();

  /// Adds a word; re-adding with the same role is a no-op, a different role throws.
  int add(const std::string& surface, Role role);

  std::optional<int> find(const std::string& surface) const;
  /// Like find() but throws DataError naming the token.
  int id(const std::string& surface) const;
  const Token& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }

  /// Ingredient index (position in the ingredient list) <-> token id.
  int ingredient_count() const { return static_cast<int>(ingredient_ids_.size()); }
  int ingredient_token(int index) const;
  std::optional<int> ingredient_index(int token_id) const;

  Token make_token(const std::string& surface) const { return token(id(surface)); }

 private:
  std::vector<Token> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> ingredient_ids_;
  std::unordered_map<int, int> ingredient_of_token_;
};

/// Pattern entry equal to this string is filled with an ingredient.
inline constexpr std::string_view kIngredientSlot = "{ING}";
/// Reserved action standing for "procedure ends here" in next-action distributions.
inline constexpr std::string_view kEndAction = "<end>";

struct ActionTemplate {
  std::string id;
  std::vector<std::string> pattern;
};

struct Successor {
  std::string node;
  double prob = 0.0;
};

struct TemplateNode {
  std::string action;
  std::vector<Successor> next;  // empty: terminal
};

struct RecipeTemplate {
  std::string name;
  std::string recipe_type;
  double prior = 0.0;
  std::string start;
  std::map<std::string, TemplateNode> nodes;
  std::vector<int> ingredient_pool;
  int ingredient_count = 0;
};

/// A complete action path through one template with its probability
/// (template prior times branch probabilities).
struct GrammarPath {
  std::size_t template_index = 0;
  std::vector<std::string> actions;
  double prob = 0.0;
};

struct Grammar {
  int max_T = 8;
  int max_step_len = 8;
  Vocabulary vocab;
  std::map<std::string, ActionTemplate> actions;
  std::vector<RecipeTemplate> templates;

  /// Throws DataError describing the first offending element.
  void validate() const;

  /// Every complete path of every template, with probabilities summing to 1.
  std::vector<GrammarPath> enumerate_paths() const;

  /// Copy keeping only templates whose recipe_type is (or is not, when
  /// `exclude`) in `types`; priors are renormalised.
  Grammar restrict_to(const std::vector<std::string>& types, bool exclude = false) const;

  std::vector<std::string> recipe_types() const;

  static Grammar from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static Grammar load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

std::vector<Procedure> generate_corpus(const Grammar& grammar, int n, std::uint64_t seed);

/// Exact conditional distribution of the next action given the action ids of
/// the steps observed so far (ingredients excluded). Terminal continuations
/// appear under kEndAction.
std::map<std::string, double> oracle_next_distribution(const Grammar& grammar,
                                                       const std::vector<std::string>& prefix);

/// Checks the Procedure invariants; throws DataError otherwise.
void check_procedure(const Procedure& p, const Vocabulary& vocab, int min_steps = 2);

nlohmann::json procedure_to_json(const Procedure& p);
/// Tokens are resolved against `vocab`; unknown surfaces throw DataError.
Procedure procedure_from_json(const nlohmann::json& j, const Vocabulary& vocab);

void write_corpus(const std::filesystem::path& path, const std::vector<Procedure>& procedures);
/// `min_steps` is 2 for corpora; context files may hold shorter procedures.
std::vector<Procedure> read_corpus(const std::filesystem::path& path, const Vocabulary& vocab,
                                   int min_steps = 2);

std::vector<std::string> action_prefix(const Procedure& p, std::size_t t);
std::string join_surfaces(const Step& s);

}  // namespace stepcast
