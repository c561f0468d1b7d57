#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace moledit {

/// One expertise unit of a token sequence: a functional group of a molecule
/// or a description of a caption. Token indices need not be contiguous.
struct ExpertiseSegment {
  std::string label;
  std::vector<std::size_t> tokens;
};

/// Partition of the token range [0, token_count) into expertise segments.
struct ExpertiseSegmentation {
  std::vector<ExpertiseSegment> segments;
  std::size_t token_count = 0;

  /// True when every token index appears in exactly one non-empty segment.
  bool is_partition() const;
  /// Segment index owning each token; requires is_partition().
  std::vector<std::size_t> owner_of_tokens() const;
};

/// A single segment covering the whole sequence.
ExpertiseSegmentation whole_sequence_segmentation(std::size_t token_count,
                                                  std::string label = "all");

}  // namespace moledit
