#pragma once

#include "stepcast/corpus.hpp"

#include <string>
#include <vector>

namespace stepcast {

/// Built-in cooking grammar: 8 recipe types, 40 ingredients, max_T = 8.
Grammar desk_grammar();

/// Recipe types held out of training in the desk experiment.
std::vector<std::string> desk_unseen_types();

/// Action prefix ending at the soup branch point whose successors are
/// distributed {saute: 0.5, boil: 0.3, roast: 0.2}.
std::vector<std::string> desk_branch_prefix();

}  // namespace stepcast
