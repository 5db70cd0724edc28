#pragma once

#include <cstddef>
#include <vector>

#include "compose/matrix.hpp"

namespace compose {

// One image reduced to its K slot aggregates (rows unit-norm) plus its label.
struct LabeledSlots {
  Matrix phi;
  int label = 0;
};

// N-way K-shot episode. Every query label appears among the support labels.
struct Episode {
  std::vector<LabeledSlots> support;
  std::vector<LabeledSlots> query;
  std::size_t way = 0;
  std::size_t shot = 0;
  std::size_t queries_per_class = 0;

  // Sorted distinct support labels.
  std::vector<int> classes() const;
  void validate() const;
};

}  // namespace compose
