#include "moledit/segmentation.hpp"

#include <limits>
#include <numeric>

namespace moledit {

bool ExpertiseSegmentation::is_partition() const {
  std::vector<int> seen(token_count, 0);
  for (const auto& seg : segments) {
    if (seg.tokens.empty()) return false;
    for (auto t : seg.tokens) {
      if (t >= token_count || seen[t]++) return false;
    }
  }
  for (int s : seen)
    if (s != 1) return false;
  return token_count > 0 || segments.empty();
}

std::vector<std::size_t> ExpertiseSegmentation::owner_of_tokens() const {
  std::vector<std::size_t> owner(token_count,
                                 std::numeric_limits<std::size_t>::max());
  for (std::size_t s = 0; s < segments.size(); ++s)
    for (auto t : segments[s].tokens) owner.at(t) = s;
  return owner;
}

ExpertiseSegmentation whole_sequence_segmentation(std::size_t token_count,
                                                  std::string label) {
  ExpertiseSegmentation seg;
  seg.token_count = token_count;
  if (token_count > 0) {
    ExpertiseSegment s{std::move(label), std::vector<std::size_t>(token_count)};
    std::iota(s.tokens.begin(), s.tokens.end(), std::size_t{0});
    seg.segments.push_back(std::move(s));
  }
  return seg;
}

}  // namespace moledit
