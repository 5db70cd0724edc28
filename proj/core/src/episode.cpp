#include "compose/episode.hpp"

#include <algorithm>
#include <set>

#include "compose/errors.hpp"

namespace compose {

std::vector<int> Episode::classes() const {
  std::set<int> ids;
  for (const auto& s : support) ids.insert(s.label);
  return {ids.begin(), ids.end()};
}

void Episode::validate() const {
  if (support.empty()) throw InvalidArgument("episode: empty support set");
  const auto cls = classes();
  std::size_t k = support.front().phi.rows();
  std::size_t d = support.front().phi.cols();
  auto check = [&](const LabeledSlots& s) {
    if (s.phi.rows() != k || s.phi.cols() != d) throw InvalidArgument("episode: inconsistent slot matrix shapes");
  };
  for (const auto& s : support) check(s);
  for (const auto& q : query) {
    check(q);
    if (!std::binary_search(cls.begin(), cls.end(), q.label))
      throw InvalidArgument("episode: query class " + std::to_string(q.label) + " missing from support");
  }
}

}  // namespace compose
