#pragma once

#include <string>
#include <string_view>

namespace rbsde {

enum class Status { Pass, Fail, Inconclusive, NotApplicable };

constexpr std::string_view to_string(Status s) {
    switch (s) {
        case Status::Pass: return "PASS";
        case Status::Fail: return "FAIL";
        case Status::Inconclusive: return "INCONCLUSIVE";
        case Status::NotApplicable: return "NOT-APPLICABLE";
    }
    return "UNKNOWN";
}

/// Outcome of one verification instrument. `worst_margin` is the smallest slack
/// (bound minus observed) over all inspected nodes; +inf when nothing was binding.
struct Verdict {
    std::string name;
    Status status = Status::NotApplicable;
    double worst_margin = 0.0;
    std::string witness;
    std::string detail;
};

}  // namespace rbsde
