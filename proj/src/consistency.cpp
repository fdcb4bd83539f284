#include "samqa/consistency.hpp"

#include "samqa/assignment.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace samqa {

std::string_view to_string(SizeAnchor anchor) {
    return anchor == SizeAnchor::LastManual ? "last_manual" : "previous_frame";
}

SizeAnchor size_anchor_from_string(std::string_view name) {
    if (name == "last_manual") return SizeAnchor::LastManual;
    if (name == "previous_frame") return SizeAnchor::PreviousFrame;
    throw ConsistencyError("unknown size anchor: " + std::string(name));
}

void ConsistencyParams::validate() const {
    if (!(alpha >= 0.0)) throw ConsistencyError("alpha must be >= 0");
    if (!(beta > 0.0 && beta <= 1.0)) throw ConsistencyError("beta must lie in (0, 1]");
    if (!(min_match_iou >= 0.0 && min_match_iou < 1.0))
        throw ConsistencyError("min_match_iou must lie in [0, 1)");
}

double Association::total_iou() const {
    double total = 0.0;
    for (const auto& p : pairs) total += p.iou;
    return total;
}

std::string describe(const Verdict& v) {
    std::ostringstream out;
    std::visit(
        [&out](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, VerdictPass>) {
                out << (d.validation_skipped ? "pass (trusted prompt)" : "pass");
            } else if constexpr (std::is_same_v<T, VerdictFailOverlap>) {
                out << "overlap: instances " << d.first_id << " and " << d.second_id
                    << " have IoU " << d.iou;
            } else if constexpr (std::is_same_v<T, VerdictFailSize>) {
                out << "size: instance " << d.instance_id << " area " << d.area
                    << " outside [" << d.lower << ", " << d.upper << "]";
            } else {
                out << "association: unmatched previous {";
                for (std::size_t i = 0; i < d.unmatched_prev.size(); ++i)
                    out << (i ? "," : "") << d.unmatched_prev[i];
                out << "} current {";
                for (std::size_t i = 0; i < d.unmatched_curr.size(); ++i)
                    out << (i ? "," : "") << d.unmatched_curr[i];
                out << "}";
            }
        },
        v);
    return out.str();
}

namespace {

std::vector<std::size_t> order_by_id(std::span<const InstanceMask> masks) {
    std::vector<std::size_t> order(masks.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return masks[a].instance_id < masks[b].instance_id;
    });
    return order;
}

}  // namespace

Association associate(std::span<const InstanceMask> prev, std::span<const InstanceMask> curr,
                      const ConsistencyParams& params) {
    const auto po = order_by_id(prev);
    const auto co = order_by_id(curr);

    CostMatrix cost(po.size(), co.size());
    std::vector<double> iou(po.size() * co.size());
    for (std::size_t i = 0; i < po.size(); ++i) {
        for (std::size_t j = 0; j < co.size(); ++j) {
            const double v = mask_iou(prev[po[i]].mask, curr[co[j]].mask);
            iou[i * co.size() + j] = v;
            cost(i, j) = -v;
        }
    }

    const auto row_to_col = solve_assignment(cost);
    Association out;
    std::vector<bool> curr_used(co.size(), false);
    for (std::size_t i = 0; i < po.size(); ++i) {
        const int j = row_to_col[i];
        if (j >= 0 && iou[i * co.size() + j] > params.min_match_iou) {
            out.pairs.push_back(
                {prev[po[i]].instance_id, curr[co[j]].instance_id, iou[i * co.size() + j]});
            curr_used[j] = true;
        } else {
            out.unmatched_prev.push_back(prev[po[i]].instance_id);
        }
    }
    for (std::size_t j = 0; j < co.size(); ++j)
        if (!curr_used[j]) out.unmatched_curr.push_back(curr[co[j]].instance_id);
    return out;
}

OverlapCheck check_overlap(std::span<const BinaryMask> masks, double beta) {
    for (std::size_t i = 0; i < masks.size(); ++i) {
        for (std::size_t j = i + 1; j < masks.size(); ++j) {
            const double v = mask_iou(masks[i], masks[j]);
            if (v > beta) return {false, static_cast<int>(i), static_cast<int>(j), v};
        }
    }
    return {};
}

SizeCheck check_size(long long anchor_area, long long curr_area, double alpha) {
    if (anchor_area <= 0) throw ConsistencyError("check_size: anchor area must be positive");
    const double a = static_cast<double>(anchor_area);
    SizeCheck out{true, (1.0 - alpha) * a, (1.0 + alpha) * a};
    const double x = static_cast<double>(curr_area);
    out.passed = x >= out.lower && x <= out.upper;
    return out;
}

ValidationResult validate(const PrevContext& context, std::span<const InstanceMask> curr,
                          const ConsistencyParams& params) {
    params.validate();
    ValidationResult result{VerdictPass{}, associate(context.previous, curr, params)};
    const auto& assoc = result.association;
    if (!assoc.unmatched_prev.empty() || !assoc.unmatched_curr.empty()) {
        result.verdict = VerdictFailAssociation{assoc.unmatched_prev, assoc.unmatched_curr};
        return result;
    }

    auto find = [](std::span<const InstanceMask> set, int id) -> const InstanceMask& {
        return *std::find_if(set.begin(), set.end(),
                             [id](const InstanceMask& m) { return m.instance_id == id; });
    };

    for (const auto& pair : assoc.pairs) {
        const auto& prev = find(context.previous, pair.prev_id);
        long long anchor = mask_area(prev.mask);
        if (params.size_anchor == SizeAnchor::LastManual) {
            if (auto it = context.trusted_areas.find(pair.prev_id); it != context.trusted_areas.end())
                anchor = it->second;
        }
        const long long area = mask_area(find(curr, pair.curr_id).mask);
        const auto size = check_size(anchor, area, params.alpha);
        if (!size.passed) {
            result.verdict = VerdictFailSize{pair.prev_id, area, size.lower, size.upper};
            return result;
        }
    }

    std::vector<BinaryMask> masks;
    std::vector<int> ids;
    for (const auto& pair : assoc.pairs) {
        masks.push_back(find(curr, pair.curr_id).mask);
        ids.push_back(pair.prev_id);
    }
    const auto overlap = check_overlap(masks, params.beta);
    if (!overlap.passed)
        result.verdict = VerdictFailOverlap{ids[overlap.first], ids[overlap.second], overlap.iou};
    return result;
}

}  // namespace samqa
