#include "stepcast/desk_grammar.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <stdexcept>

namespace stepcast {

namespace {

using nlohmann::json;

const std::vector<std::string> kIngredients = {
    "onion",   "garlic",  "tomato",   "carrot",   "potato",   "celery",  "pepper",
    "chicken", "beef",    "pork",     "shrimp",   "tofu",     "egg",     "rice",
    "pasta",   "noodles", "beans",    "lentils",  "spinach",  "cabbage", "mushroom",
    "zucchini", "eggplant", "corn",   "peas",     "lime",     "ginger",  "chili",
    "basil",   "cilantro", "parsley", "cheese",   "butter",   "cream",   "yogurt",
    "apple",   "cucumber", "lettuce", "avocado",  "ham"};

const std::vector<std::string> kVerbs = {
    "rinse", "chop",   "heat",  "saute",   "boil",  "roast", "add",   "pour",  "simmer",
    "blend", "season", "serve", "wash",    "slice", "mix",   "whisk", "toss",  "chill",
    "garnish", "marinate", "steam", "drain", "cook", "combine", "grate", "preheat", "knead",
    "bake",  "cool",   "spread", "layer",  "toast", "cut",   "fry",   "fold",  "dice",
    "peel",  "mince",  "grill", "mash",    "stir",  "sprinkle", "brush", "reduce"};

const std::vector<std::string> kOther = {
    "the",   "a",      "in",    "into",   "with",   "and",    "to",     "until",  "on",
    "of",    "for",    "over",  "pan",    "pot",    "bowl",   "oven",   "water",  "oil",
    "minutes", "golden", "soft", "tender", "large", "small",  "pieces", "well",   "together",
    "medium", "high",  "flame", "sauce",  "dough",  "tray",   "plate",  "skillet", "wok",
    "lid",   "aside",  "set",   "stock",  "twenty", "ten",    "smooth", "hot",    "bowls",
    "dressing", "lemon", "juice", "fridge", "soy",  "quickly", "spices", "al",    "dente",
    "top",   "flour",  "sugar", "salt",   "brown",  "it",     "let",    "rack",   "bread",
    "half",  "sandwich", "coconut", "milk", "curry", "steamed", "grains", "charred", "crisp",
    "batter", "eggs",  "under", "cold",   "thinly", "bring",  "cubes",  "evenly", "gently",
    "warm",  "fresh",  "fine",  "thick",  "slices", "side",   "sides",  "both",   "more",
    "mixture", "liquid", "pinch", "black", "then",  "cover",  "uncovered", "filling", "mold",
    "board", "knife",  "glaze", "vinegar", "honey", "mustard", "broth", "seeds",  "paste"};

const json kActions = {
    {"rinse", {"rinse", "the", "{ING}", "under", "cold", "water"}},
    {"chop", {"chop", "the", "{ING}", "into", "small", "pieces"}},
    {"dice", {"dice", "the", "{ING}", "into", "cubes"}},
    {"slice", {"slice", "the", "{ING}", "thinly"}},
    {"mince", {"mince", "the", "{ING}", "fine"}},
    {"wash", {"wash", "the", "{ING}", "well"}},
    {"peel", {"peel", "the", "{ING}"}},
    {"heat_oil_pot", {"heat", "oil", "in", "a", "large", "pot"}},
    {"heat_oil_pan", {"heat", "oil", "in", "a", "pan"}},
    {"heat_wok", {"heat", "the", "wok", "over", "high", "flame"}},
    {"saute", {"saute", "the", "{ING}", "until", "soft"}},
    {"boil", {"boil", "the", "{ING}", "in", "water"}},
    {"roast", {"roast", "the", "{ING}", "in", "the", "oven"}},
    {"add_stock", {"pour", "stock", "into", "the", "pot"}},
    {"simmer", {"simmer", "for", "twenty", "minutes"}},
    {"blend", {"blend", "the", "soup", "until", "smooth"}},
    {"season", {"season", "with", "salt", "and", "{ING}"}},
    {"serve_bowl", {"serve", "hot", "in", "bowls"}},
    {"whisk_dressing", {"whisk", "oil", "and", "lemon", "juice"}},
    {"mix_bowl", {"mix", "the", "{ING}", "in", "a", "bowl"}},
    {"toss", {"toss", "the", "{ING}", "with", "dressing"}},
    {"chill", {"chill", "in", "the", "fridge"}},
    {"garnish", {"garnish", "with", "fresh", "{ING}"}},
    {"serve_plate", {"serve", "on", "a", "plate"}},
    {"marinate", {"marinate", "the", "{ING}", "with", "spices"}},
    {"stir_fry", {"stir", "fry", "the", "{ING}", "quickly"}},
    {"steam", {"steam", "the", "{ING}", "until", "tender"}},
    {"add_sauce", {"add", "soy", "sauce", "and", "stir"}},
    {"serve_grains", {"serve", "with", "steamed", "grains"}},
    {"boil_pasta", {"boil", "the", "{ING}", "until", "al", "dente"}},
    {"drain", {"drain", "and", "set", "aside"}},
    {"make_sauce", {"cook", "the", "{ING}", "into", "a", "sauce"}},
    {"fry", {"fry", "the", "{ING}", "until", "crisp"}},
    {"combine", {"combine", "the", "{ING}", "with", "the", "sauce"}},
    {"grate", {"grate", "the", "{ING}", "on", "top"}},
    {"preheat", {"preheat", "the", "oven"}},
    {"mix_flour", {"mix", "flour", "sugar", "and", "{ING}"}},
    {"knead", {"knead", "the", "dough", "with", "{ING}"}},
    {"fold", {"fold", "the", "{ING}", "into", "the", "batter"}},
    {"bake", {"bake", "until", "golden", "brown"}},
    {"cool", {"let", "it", "cool", "on", "a", "rack"}},
    {"spread", {"spread", "the", "{ING}", "on", "bread"}},
    {"whisk_eggs", {"whisk", "the", "eggs", "with", "{ING}"}},
    {"layer", {"layer", "the", "{ING}", "on", "top"}},
    {"fry_spices", {"fry", "the", "spices", "in", "oil"}},
    {"add_coconut", {"add", "coconut", "milk", "and", "stir"}},
    {"simmer_curry", {"simmer", "the", "{ING}", "in", "the", "curry"}},
    {"toast", {"toast", "the", "bread", "in", "a", "pan"}},
    {"grill", {"grill", "the", "{ING}", "until", "charred"}},
    {"cut_half", {"cut", "the", "sandwich", "in", "half"}},
    {"mash", {"mash", "the", "{ING}", "gently"}},
    {"sprinkle", {"sprinkle", "a", "pinch", "of", "salt"}},
    {"brush", {"brush", "the", "tray", "with", "oil"}},
    {"reduce", {"reduce", "the", "sauce", "until", "thick"}}};

struct NodeDef {
  std::string name;
  std::string action;
  std::vector<std::pair<std::string, double>> next;
};

struct TemplateDef {
  std::string name;
  std::string type;
  std::vector<std::string> pool;
  std::vector<NodeDef> nodes;  // first node is the start
};

const std::vector<TemplateDef> kTemplates = {
    {"soup", "soup",
     {"onion", "garlic", "tomato", "carrot", "potato", "celery", "lentils", "beans", "peas",
      "corn", "cabbage", "mushroom", "ginger", "cream"},
     {{"s1", "rinse", {{"s2", 1.0}}},
      {"s2", "chop", {{"s3", 1.0}}},
      {"s3", "heat_oil_pot", {{"s4a", 0.5}, {"s4b", 0.3}, {"s4c", 0.2}}},
      {"s4a", "saute", {{"s5", 1.0}}},
      {"s4b", "boil", {{"s5", 1.0}}},
      {"s4c", "roast", {{"s5", 1.0}}},
      {"s5", "add_stock", {{"s6a", 0.7}, {"s6b", 0.3}}},
      {"s6a", "simmer", {{"s7", 1.0}}},
      {"s6b", "blend", {{"s7", 1.0}}},
      {"s7", "season", {{"s8", 1.0}}},
      {"s8", "serve_bowl", {}}}},
    {"salad", "salad",
     {"tomato", "cucumber", "lettuce", "avocado", "carrot", "corn", "apple", "cheese", "basil",
      "parsley", "cilantro", "spinach", "onion", "peas"},
     {{"a1", "wash", {{"a2a", 0.5}, {"a2b", 0.5}}},
      {"a2a", "chop", {{"a3", 1.0}}},
      {"a2b", "slice", {{"a3", 1.0}}},
      {"a3", "mix_bowl", {{"a4", 1.0}}},
      {"a4", "whisk_dressing", {{"a5", 1.0}}},
      {"a5", "toss", {{"a6a", 0.6}, {"a6b", 0.4}}},
      {"a6a", "garnish", {{"a7", 1.0}}},
      {"a6b", "chill", {{"a7", 1.0}}},
      {"a7", "serve_plate", {}}}},
    {"stir_fry", "stir_fry",
     {"chicken", "beef", "pork", "shrimp", "tofu", "pepper", "onion", "garlic", "ginger",
      "chili", "mushroom", "cabbage", "noodles", "rice"},
     {{"f1", "marinate", {{"f2", 1.0}}},
      {"f2", "slice", {{"f3", 1.0}}},
      {"f3", "heat_wok", {{"f4a", 0.6}, {"f4b", 0.4}}},
      {"f4a", "stir_fry", {{"f5", 1.0}}},
      {"f4b", "steam", {{"f5", 1.0}}},
      {"f5", "add_sauce", {{"f6a", 0.5}, {"f6b", 0.5}}},
      {"f6a", "garnish", {}},
      {"f6b", "serve_grains", {}}}},
    {"pasta", "pasta",
     {"pasta", "noodles", "tomato", "garlic", "basil", "cheese", "cream", "butter", "mushroom",
      "spinach", "ham", "zucchini", "pepper", "onion"},
     {{"p1", "boil_pasta", {{"p2", 1.0}}},
      {"p2", "drain", {{"p3", 1.0}}},
      {"p3", "heat_oil_pan", {{"p4a", 0.5}, {"p4b", 0.3}, {"p4c", 0.2}}},
      {"p4a", "make_sauce", {{"p5", 1.0}}},
      {"p4b", "saute", {{"p5", 1.0}}},
      {"p4c", "fry", {{"p5", 1.0}}},
      {"p5", "combine", {{"p6a", 0.5}, {"p6b", 0.5}}},
      {"p6a", "grate", {{"p7", 1.0}}},
      {"p6b", "garnish", {{"p7", 1.0}}},
      {"p7", "serve_plate", {}}}},
    {"bake", "bake",
     {"apple", "butter", "egg", "cheese", "cream", "yogurt", "corn", "potato", "zucchini", "ham",
      "onion", "spinach"},
     {{"b1", "preheat", {{"b2", 1.0}}},
      {"b2", "mix_flour", {{"b3a", 0.5}, {"b3b", 0.5}}},
      {"b3a", "knead", {{"b4", 1.0}}},
      {"b3b", "fold", {{"b4", 1.0}}},
      {"b4", "bake", {{"b5", 1.0}}},
      {"b5", "cool", {{"b6a", 0.3}, {"b6b", 0.7}}},
      {"b6a", "spread", {{"b7", 1.0}}},
      {"b6b", "serve_plate", {}},
      {"b7", "serve_plate", {}}}},
    {"omelette", "omelette",
     {"egg", "cheese", "ham", "onion", "pepper", "tomato", "mushroom", "spinach", "basil",
      "parsley", "butter", "cream"},
     {{"o1", "whisk_eggs", {{"o2", 1.0}}},
      {"o2", "dice", {{"o3", 1.0}}},
      {"o3", "heat_oil_pan", {{"o4a", 0.5}, {"o4b", 0.5}}},
      {"o4a", "fry", {{"o5", 1.0}}},
      {"o4b", "saute", {{"o5", 1.0}}},
      {"o5", "layer", {{"o6", 1.0}}},
      {"o6", "serve_plate", {}}}},
    {"curry", "curry",
     {"chicken", "lentils", "potato", "tomato", "onion", "garlic", "ginger", "chili", "cilantro",
      "peas", "spinach", "eggplant", "tofu", "yogurt"},
     {{"c1", "fry_spices", {{"c2", 1.0}}},
      {"c2", "chop", {{"c3", 1.0}}},
      {"c3", "saute", {{"c4", 1.0}}},
      {"c4", "add_coconut", {{"c5a", 0.6}, {"c5b", 0.4}}},
      {"c5a", "simmer_curry", {{"c6", 1.0}}},
      {"c5b", "steam", {{"c6", 1.0}}},
      {"c6", "garnish", {{"c7", 1.0}}},
      {"c7", "serve_grains", {}}}},
    {"sandwich", "sandwich",
     {"ham", "cheese", "lettuce", "tomato", "avocado", "cucumber", "egg", "chicken", "butter",
      "onion", "pepper", "basil"},
     {{"w1", "toast", {{"w2", 1.0}}},
      {"w2", "spread", {{"w3a", 0.5}, {"w3b", 0.5}}},
      {"w3a", "layer", {{"w4", 1.0}}},
      {"w3b", "grill", {{"w4", 1.0}}},
      {"w4", "cut_half", {{"w5", 1.0}}},
      {"w5", "serve_plate", {}}}}};

int ingredient_index(const std::string& name) {
  const auto it = std::find(kIngredients.begin(), kIngredients.end(), name);
  if (it == kIngredients.end()) {
    throw std::logic_error("desk grammar: unknown ingredient " + name);
  }
  return static_cast<int>(it - kIngredients.begin());
}

}  // namespace

Grammar desk_grammar() {
  json templates = json::array();
  for (const auto& t : kTemplates) {
    json nodes = json::object();
    for (const auto& n : t.nodes) {
      json next = json::array();
      for (const auto& [node, prob] : n.next) {
        next.push_back({{"node", node}, {"prob", prob}});
      }
      nodes[n.name] = {{"action", n.action}, {"next", next}};
    }
    std::vector<int> pool;
    for (const auto& name : t.pool) {
      pool.push_back(ingredient_index(name));
    }
    std::sort(pool.begin(), pool.end());
    templates.push_back({{"name", t.name},
                         {"recipe_type", t.type},
                         {"prior", 1.0 / static_cast<double>(kTemplates.size())},
                         {"start", t.nodes.front().name},
                         {"ingredient_pool", pool},
                         {"ingredient_count", 4},
                         {"nodes", nodes}});
  }
  std::vector<std::string> other = kOther;
  other.push_back("soup");
  const json doc = {{"max_T", 8},
                    {"max_step_len", 8},
                    {"vocab", {{"ingredients", kIngredients}, {"verbs", kVerbs}, {"other", other}}},
                    {"actions", kActions},
                    {"templates", templates}};
  Grammar g = Grammar::from_json(doc);
  g.validate();
  return g;
}

std::vector<std::string> desk_unseen_types() { return {"curry", "sandwich"}; }

std::vector<std::string> desk_branch_prefix() { return {"rinse", "chop", "heat_oil_pot"}; }

}  // namespace stepcast
