#include "stepcast/corpus.hpp"

#include "stepcast/errors.hpp"
#include "stepcast/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace stepcast {

using nlohmann::json;

std::string_view role_name(Role r) {
  switch (r) {
    case Role::Verb:
      return "VERB";
    case Role::Ingredient:
      return "INGREDIENT";
    case Role::Other:
      return "OTHER";
    case Role::Bos:
      return "BOS";
    case Role::Eos:
      return "EOS";
    case Role::Pad:
      return "PAD";
  }
  return "?";
}

Vocabulary::Vocabulary() {
  tokens_ = {{"<pad>", Role::Pad}, {"<bos>", Role::Bos}, {"<eos>", Role::Eos}};
  for (int i = 0; i < 3; ++i) {
    index_[tokens_[static_cast<std::size_t>(i)].surface] = i;
  }
}

int Vocabulary::add(const std::string& surface, Role role) {
  if (surface.empty()) {
    throw DataError("vocabulary: empty surface");
  }
  if (role == Role::Bos || role == Role::Eos || role == Role::Pad) {
    throw DataError("vocabulary: special roles are reserved (" + surface + ")");
  }
  if (auto it = index_.find(surface); it != index_.end()) {
    if (tokens_[static_cast<std::size_t>(it->second)].role != role) {
      throw DataError("vocabulary: token '" + surface + "' declared with two roles");
    }
    return it->second;
  }
  const int id = size();
  tokens_.push_back({surface, role});
  index_[surface] = id;
  if (role == Role::Ingredient) {
    ingredient_of_token_[id] = static_cast<int>(ingredient_ids_.size());
    ingredient_ids_.push_back(id);
  }
  return id;
}

std::optional<int> Vocabulary::find(const std::string& surface) const {
  if (auto it = index_.find(surface); it != index_.end()) {
    return it->second;
  }
  return std::nullopt;
}

int Vocabulary::id(const std::string& surface) const {
  if (auto v = find(surface)) {
    return *v;
  }
  throw DataError("unknown token '" + surface + "'");
}

int Vocabulary::ingredient_token(int index) const {
  if (index < 0 || index >= ingredient_count()) {
    throw DataError("ingredient index " + std::to_string(index) + " out of range");
  }
  return ingredient_ids_[static_cast<std::size_t>(index)];
}

std::optional<int> Vocabulary::ingredient_index(int token_id) const {
  if (auto it = ingredient_of_token_.find(token_id); it != ingredient_of_token_.end()) {
    return it->second;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Grammar

namespace {

constexpr double kProbTolerance = 1e-9;

void check_distribution(const std::vector<Successor>& next, const std::string& where) {
  double total = 0.0;
  for (const auto& s : next) {
    if (!(s.prob > 0.0)) {
      throw DataError("grammar: non-positive probability at branch point " + where + " -> " +
                      s.node);
    }
    total += s.prob;
  }
  if (std::abs(total - 1.0) > kProbTolerance) {
    std::ostringstream os;
    os.precision(12);
    os << "grammar: successor probabilities at branch point " << where << " sum to " << total;
    throw DataError(os.str());
  }
}

}  // namespace

void Grammar::validate() const {
  if (max_T < 2 || max_step_len < 1) {
    throw DataError("grammar: max_T must be >= 2 and max_step_len >= 1");
  }
  if (templates.empty()) {
    throw DataError("grammar: no templates");
  }
  for (const auto& [id, a] : actions) {
    if (a.pattern.empty() || static_cast<int>(a.pattern.size()) > max_step_len) {
      throw DataError("grammar: action '" + id + "' has invalid pattern length");
    }
    for (const auto& w : a.pattern) {
      if (w == kIngredientSlot) {
        continue;
      }
      const int tid = vocab.id(w);
      const Role r = vocab.token(tid).role;
      if (r == Role::Ingredient) {
        throw DataError("grammar: action '" + id + "' uses ingredient '" + w +
                        "' as a literal; use a slot");
      }
    }
  }
  double prior_total = 0.0;
  for (const auto& t : templates) {
    if (!(t.prior > 0.0)) {
      throw DataError("grammar: template '" + t.name + "' has non-positive prior");
    }
    prior_total += t.prior;
    if (!t.nodes.contains(t.start)) {
      throw DataError("grammar: template '" + t.name + "' start node missing");
    }
    if (t.ingredient_count < 1 ||
        t.ingredient_count > static_cast<int>(t.ingredient_pool.size())) {
      throw DataError("grammar: template '" + t.name + "' has invalid ingredient_count");
    }
    for (int ing : t.ingredient_pool) {
      if (ing < 0 || ing >= vocab.ingredient_count()) {
        throw DataError("grammar: template '" + t.name + "' ingredient index out of range");
      }
    }
    for (const auto& [name, node] : t.nodes) {
      const std::string where = t.name + "/" + name;
      if (!actions.contains(node.action)) {
        throw DataError("grammar: node " + where + " references unknown action '" +
                        node.action + "'");
      }
      if (!node.next.empty()) {
        check_distribution(node.next, where);
      }
      for (const auto& s : node.next) {
        if (!t.nodes.contains(s.node)) {
          throw DataError("grammar: node " + where + " has unknown successor '" + s.node + "'");
        }
      }
    }
    // Depth-first walk: rejects cycles and checks every path length.
    std::set<std::string> on_stack;
    std::function<void(const std::string&, int)> walk = [&](const std::string& n, int depth) {
      if (on_stack.contains(n)) {
        throw DataError("grammar: template '" + t.name + "' has a cycle through '" + n + "'");
      }
      if (depth > max_T) {
        throw DataError("grammar: template '" + t.name + "' has a path longer than max_T");
      }
      const TemplateNode& node = t.nodes.at(n);
      if (node.next.empty()) {
        if (depth < 2) {
          throw DataError("grammar: template '" + t.name + "' has a path shorter than 2 steps");
        }
        return;
      }
      on_stack.insert(n);
      for (const auto& s : node.next) {
        walk(s.node, depth + 1);
      }
      on_stack.erase(n);
    };
    walk(t.start, 1);
  }
  if (std::abs(prior_total - 1.0) > kProbTolerance) {
    std::ostringstream os;
    os.precision(12);
    os << "grammar: template priors sum to " << prior_total;
    throw DataError(os.str());
  }
}

std::vector<GrammarPath> Grammar::enumerate_paths() const {
  std::vector<GrammarPath> out;
  for (std::size_t ti = 0; ti < templates.size(); ++ti) {
    const RecipeTemplate& t = templates[ti];
    std::vector<std::string> acts;
    std::function<void(const std::string&, double)> walk = [&](const std::string& n, double p) {
      const TemplateNode& node = t.nodes.at(n);
      acts.push_back(node.action);
      if (node.next.empty()) {
        out.push_back({ti, acts, p});
      } else {
        for (const auto& s : node.next) {
          walk(s.node, p * s.prob);
        }
      }
      acts.pop_back();
    };
    walk(t.start, t.prior);
  }
  return out;
}

Grammar Grammar::restrict_to(const std::vector<std::string>& types, bool exclude) const {
  Grammar g = *this;
  g.templates.clear();
  double total = 0.0;
  for (const auto& t : templates) {
    const bool listed = std::find(types.begin(), types.end(), t.recipe_type) != types.end();
    if (listed != exclude) {
      g.templates.push_back(t);
      total += t.prior;
    }
  }
  if (g.templates.empty()) {
    throw DataError("grammar: no templates left after recipe-type restriction");
  }
  for (auto& t : g.templates) {
    t.prior /= total;
  }
  return g;
}

std::vector<std::string> Grammar::recipe_types() const {
  std::vector<std::string> out;
  for (const auto& t : templates) {
    if (std::find(out.begin(), out.end(), t.recipe_type) == out.end()) {
      out.push_back(t.recipe_type);
    }
  }
  return out;
}

Grammar Grammar::from_json(const json& j) {
  try {
    Grammar g;
    g.max_T = j.value("max_T", 8);
    g.max_step_len = j.value("max_step_len", 8);
    const json& v = j.at("vocab");
    for (const auto& w : v.at("ingredients")) {
      g.vocab.add(w.get<std::string>(), Role::Ingredient);
    }
    for (const auto& w : v.at("verbs")) {
      g.vocab.add(w.get<std::string>(), Role::Verb);
    }
    for (const auto& w : v.at("other")) {
      g.vocab.add(w.get<std::string>(), Role::Other);
    }
    for (const auto& [id, pat] : j.at("actions").items()) {
      g.actions[id] = ActionTemplate{id, pat.get<std::vector<std::string>>()};
    }
    for (const auto& tj : j.at("templates")) {
      RecipeTemplate t;
      t.name = tj.at("name").get<std::string>();
      t.recipe_type = tj.at("recipe_type").get<std::string>();
      t.prior = tj.at("prior").get<double>();
      t.start = tj.at("start").get<std::string>();
      t.ingredient_pool = tj.at("ingredient_pool").get<std::vector<int>>();
      t.ingredient_count = tj.at("ingredient_count").get<int>();
      for (const auto& [name, nj] : tj.at("nodes").items()) {
        TemplateNode node;
        node.action = nj.at("action").get<std::string>();
        for (const auto& sj : nj.value("next", json::array())) {
          node.next.push_back({sj.at("node").get<std::string>(), sj.at("prob").get<double>()});
        }
        t.nodes[name] = std::move(node);
      }
      g.templates.push_back(std::move(t));
    }
    return g;
  } catch (const json::exception& e) {
    throw DataError(std::string("grammar: malformed document: ") + e.what());
  }
}

json Grammar::to_json() const {
  json j;
  j["max_T"] = max_T;
  j["max_step_len"] = max_step_len;
  json ing = json::array();
  json verbs = json::array();
  json other = json::array();
  for (int i = 3; i < vocab.size(); ++i) {
    const Token& t = vocab.token(i);
    (t.role == Role::Ingredient ? ing : t.role == Role::Verb ? verbs : other).push_back(t.surface);
  }
  j["vocab"] = {{"ingredients", ing}, {"verbs", verbs}, {"other", other}};
  json acts = json::object();
  for (const auto& [id, a] : actions) {
    acts[id] = a.pattern;
  }
  j["actions"] = acts;
  json ts = json::array();
  for (const auto& t : templates) {
    json nodes = json::object();
    for (const auto& [name, n] : t.nodes) {
      json next = json::array();
      for (const auto& s : n.next) {
        next.push_back({{"node", s.node}, {"prob", s.prob}});
      }
      nodes[name] = {{"action", n.action}, {"next", next}};
    }
    ts.push_back({{"name", t.name},
                  {"recipe_type", t.recipe_type},
                  {"prior", t.prior},
                  {"start", t.start},
                  {"ingredient_pool", t.ingredient_pool},
                  {"ingredient_count", t.ingredient_count},
                  {"nodes", nodes}});
  }
  j["templates"] = ts;
  return j;
}

Grammar Grammar::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open grammar file " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("grammar " + path.string() + ": " + e.what());
  }
  Grammar g = from_json(j);
  g.validate();
  return g;
}

void Grammar::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw DataError("cannot write grammar file " + path.string());
  }
  out << to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Generation and oracle

namespace {

std::size_t sample_index(Rng& rng, const std::vector<double>& probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) {
      return i;
    }
  }
  return probs.size() - 1;
}

}  // namespace

std::vector<Procedure> generate_corpus(const Grammar& grammar, int n, std::uint64_t seed) {
  if (n < 1) {
    throw UsageError("generate_corpus: n must be >= 1");
  }
  grammar.validate();
  std::vector<double> priors;
  for (const auto& t : grammar.templates) {
    priors.push_back(t.prior);
  }
  std::vector<Procedure> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    const RecipeTemplate& t = grammar.templates[sample_index(rng, priors)];
    Procedure p;
    p.recipe_type = t.recipe_type;

    std::vector<int> pool = t.ingredient_pool;
    for (int k = 0; k < t.ingredient_count; ++k) {
      const auto j = static_cast<std::size_t>(k) + rng.below(pool.size() - static_cast<std::size_t>(k));
      std::swap(pool[static_cast<std::size_t>(k)], pool[j]);
    }
    p.ingredients.assign(pool.begin(), pool.begin() + t.ingredient_count);
    std::sort(p.ingredients.begin(), p.ingredients.end());

    std::string node_name = t.start;
    while (true) {
      const TemplateNode& node = t.nodes.at(node_name);
      const ActionTemplate& act = grammar.actions.at(node.action);
      Step s;
      s.action_id = act.id;
      for (const auto& w : act.pattern) {
        if (w == kIngredientSlot) {
          const int ing = p.ingredients[rng.below(p.ingredients.size())];
          s.tokens.push_back(grammar.vocab.token(grammar.vocab.ingredient_token(ing)));
        } else {
          s.tokens.push_back(grammar.vocab.make_token(w));
        }
      }
      p.steps.push_back(std::move(s));
      if (node.next.empty()) {
        break;
      }
      std::vector<double> probs;
      for (const auto& sc : node.next) {
        probs.push_back(sc.prob);
      }
      node_name = node.next[sample_index(rng, probs)].node;
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::map<std::string, double> oracle_next_distribution(const Grammar& grammar,
                                                       const std::vector<std::string>& prefix) {
  std::map<std::string, double> mass;
  double total = 0.0;
  for (const auto& path : grammar.enumerate_paths()) {
    if (path.actions.size() < prefix.size() ||
        !std::equal(prefix.begin(), prefix.end(), path.actions.begin())) {
      continue;
    }
    const std::string next = path.actions.size() == prefix.size()
                                 ? std::string(kEndAction)
                                 : path.actions[prefix.size()];
    mass[next] += path.prob;
    total += path.prob;
  }
  if (total <= 0.0) {
    std::string joined;
    for (const auto& a : prefix) {
      joined += (joined.empty() ? "" : " ") + a;
    }
    throw DataError("oracle: prefix [" + joined + "] is not a path in any template");
  }
  for (auto& [k, v] : mass) {
    v /= total;
  }
  return mass;
}

// ---------------------------------------------------------------------------
// Files

void check_procedure(const Procedure& p, const Vocabulary& vocab, int min_steps) {
  if (static_cast<int>(p.steps.size()) < min_steps) {
    throw DataError("procedure has " + std::to_string(p.steps.size()) + " steps, need at least " +
                    std::to_string(min_steps));
  }
  if (!std::is_sorted(p.ingredients.begin(), p.ingredients.end()) ||
      std::adjacent_find(p.ingredients.begin(), p.ingredients.end()) != p.ingredients.end()) {
    throw DataError("procedure ingredient list must be sorted and unique");
  }
  for (int ing : p.ingredients) {
    if (ing < 0 || ing >= vocab.ingredient_count()) {
      throw DataError("ingredient index " + std::to_string(ing) + " out of range");
    }
  }
  for (const auto& s : p.steps) {
    if (s.tokens.empty()) {
      throw DataError("procedure step '" + s.action_id + "' has no tokens");
    }
    for (const auto& tok : s.tokens) {
      if (tok.role == Role::Bos || tok.role == Role::Eos || tok.role == Role::Pad) {
        throw DataError("special token inside a step");
      }
      if (tok.role == Role::Ingredient) {
        const int idx = *vocab.ingredient_index(vocab.id(tok.surface));
        if (!std::binary_search(p.ingredients.begin(), p.ingredients.end(), idx)) {
          throw DataError("ingredient '" + tok.surface + "' missing from the ingredient list");
        }
      }
    }
  }
}

json procedure_to_json(const Procedure& p) {
  json steps = json::array();
  for (const auto& s : p.steps) {
    std::vector<std::string> toks;
    for (const auto& t : s.tokens) {
      toks.push_back(t.surface);
    }
    steps.push_back({{"tokens", toks}, {"action_id", s.action_id}});
  }
  return {{"recipe_type", p.recipe_type}, {"ingredients", p.ingredients}, {"steps", steps}};
}

Procedure procedure_from_json(const json& j, const Vocabulary& vocab) {
  Procedure p;
  p.recipe_type = j.at("recipe_type").get<std::string>();
  p.ingredients = j.at("ingredients").get<std::vector<int>>();
  for (const auto& sj : j.at("steps")) {
    Step s;
    s.action_id = sj.at("action_id").get<std::string>();
    for (const auto& w : sj.at("tokens")) {
      s.tokens.push_back(vocab.make_token(w.get<std::string>()));
    }
    p.steps.push_back(std::move(s));
  }
  return p;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Procedure>& procedures) {
  std::ofstream out(path);
  if (!out) {
    throw DataError("cannot write corpus file " + path.string());
  }
  for (const auto& p : procedures) {
    out << procedure_to_json(p).dump() << '\n';
  }
}

std::vector<Procedure> read_corpus(const std::filesystem::path& path, const Vocabulary& vocab,
                                   int min_steps) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open corpus file " + path.string());
  }
  std::vector<Procedure> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      Procedure p = procedure_from_json(json::parse(line), vocab);
      check_procedure(p, vocab, min_steps);
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed record: " +
                      e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> action_prefix(const Procedure& p, std::size_t t) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < t && i < p.steps.size(); ++i) {
    out.push_back(p.steps[i].action_id);
  }
  return out;
}

std::string join_surfaces(const Step& s) {
  std::string out;
  for (const auto& t : s.tokens) {
    if (!out.empty()) {
      out += ' ';
    }
    out += t.surface;
  }
  return out;
}

}  // namespace stepcast
