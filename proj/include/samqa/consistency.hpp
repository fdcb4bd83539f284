#pragma once

#include "samqa/geometry.hpp"

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace samqa {

class ConsistencyError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class SizeAnchor { LastManual, PreviousFrame };

std::string_view to_string(SizeAnchor anchor);
SizeAnchor size_anchor_from_string(std::string_view name);

struct ConsistencyParams {
    double alpha = 0.1;          // size tolerance
    double beta = 0.9;           // in-frame overlap ceiling
    double min_match_iou = 0.0;  // association requires iou strictly above this
    SizeAnchor size_anchor = SizeAnchor::LastManual;

    void validate() const;
};

struct MatchedPair {
    int prev_id = 0;
    int curr_id = 0;
    double iou = 0.0;

    friend bool operator==(const MatchedPair&, const MatchedPair&) = default;
};

struct Association {
    std::vector<MatchedPair> pairs;  // sorted by prev_id
    std::vector<int> unmatched_prev;
    std::vector<int> unmatched_curr;

    [[nodiscard]] double total_iou() const;
};

struct VerdictPass {
    bool validation_skipped = false;  // trusted (initial/manual) masks
    friend bool operator==(const VerdictPass&, const VerdictPass&) = default;
};
struct VerdictFailOverlap {
    int first_id = 0;
    int second_id = 0;
    double iou = 0.0;
    friend bool operator==(const VerdictFailOverlap&, const VerdictFailOverlap&) = default;
};
struct VerdictFailSize {
    int instance_id = 0;
    long long area = 0;
    double lower = 0.0;
    double upper = 0.0;
    friend bool operator==(const VerdictFailSize&, const VerdictFailSize&) = default;
};
struct VerdictFailAssociation {
    std::vector<int> unmatched_prev;
    std::vector<int> unmatched_curr;
    friend bool operator==(const VerdictFailAssociation&, const VerdictFailAssociation&) = default;
};

using Verdict = std::variant<VerdictPass, VerdictFailOverlap, VerdictFailSize, VerdictFailAssociation>;

inline bool passed(const Verdict& v) { return std::holds_alternative<VerdictPass>(v); }
std::string describe(const Verdict& v);

struct OverlapCheck {
    bool passed = true;
    int first = -1;  // indices into the checked set
    int second = -1;
    double iou = 0.0;
};

struct SizeCheck {
    bool passed = true;
    double lower = 0.0;
    double upper = 0.0;
};

/// Optimal one-to-one matching of previous to current instances maximizing total
/// mask IoU. Pairs at or below min_match_iou are reported as unmatched.
Association associate(std::span<const InstanceMask> prev, std::span<const InstanceMask> curr,
                      const ConsistencyParams& params = {});

/// Fails on the first unordered pair (in index order) whose IoU is strictly above beta.
OverlapCheck check_overlap(std::span<const BinaryMask> masks, double beta);

/// Passes iff curr_area lies in the closed interval [(1 - alpha) A, (1 + alpha) A].
SizeCheck check_size(long long anchor_area, long long curr_area, double alpha);

struct PrevContext {
    std::vector<InstanceMask> previous;       // last accepted masks
    std::map<int, long long> trusted_areas;   // latest initial/manual area per instance
};

struct ValidationResult {
    Verdict verdict;
    Association association;
};

/// Association, then per-instance size, then in-frame overlap. The first failure is
/// reported. Overlap ids refer to the previous-frame identities the masks matched.
ValidationResult validate(const PrevContext& context, std::span<const InstanceMask> curr,
                          const ConsistencyParams& params = {});

}  // namespace samqa
