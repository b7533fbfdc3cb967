#pragma once

// Leak-safe chronological splits: per user, the most recent interventions by
// end time form the test block, the block before that validation, the rest
// train. Users with fewer than 3 examples contribute train-only. End-time
// ties at the test boundary shrink the test block so that every test
// intervention ends strictly after all train/validation ones.

#include <map>
#include <string>
#include <vector>

#include "vitalcast/common.hpp"

namespace vitalcast {

enum class Split : int { Train = 0, Validation = 1, Test = 2 };

inline const char* split_name(Split s) {
    static const char* names[3] = {"train", "validation", "test"};
    return names[static_cast<int>(s)];
}

struct SplitKey {
    std::string user_id;
    std::int64_t end_minute = 0;
    std::int64_t start_minute = 0;
};

struct SplitFractions {
    double test = 0.20;
    double validation = 0.15;
};

inline std::vector<Split> split_leak_safe(const std::vector<SplitKey>& keys,
                                          const SplitFractions& frac = {}) {
    std::vector<Split> out(keys.size(), Split::Train);
    std::map<std::string, std::vector<std::size_t>> by_user;
    for (std::size_t i = 0; i < keys.size(); ++i) by_user[keys[i].user_id].push_back(i);

    for (auto& [user, idx] : by_user) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            if (keys[a].end_minute != keys[b].end_minute)
                return keys[a].end_minute < keys[b].end_minute;
            if (keys[a].start_minute != keys[b].start_minute)
                return keys[a].start_minute < keys[b].start_minute;
            return a < b;
        });
        std::size_t n = idx.size();
        if (n < 3) continue;  // train-only user

        std::size_t n_test = static_cast<std::size_t>(std::ceil(frac.test * n));
        std::size_t cut_test = n - std::min(n_test, n);
        // Strict ordering: ties straddling the boundary move into the earlier
        // sets rather than leaking same-minute interventions into test.
        while (cut_test < n && cut_test > 0 &&
               keys[idx[cut_test - 1]].end_minute == keys[idx[cut_test]].end_minute) {
            ++cut_test;
        }
        std::size_t n_val = static_cast<std::size_t>(std::ceil(frac.validation * n));
        std::size_t cut_val = cut_test > n_val ? cut_test - n_val : 0;

        for (std::size_t p = cut_val; p < cut_test; ++p) out[idx[p]] = Split::Validation;
        for (std::size_t p = cut_test; p < n; ++p) out[idx[p]] = Split::Test;
    }
    return out;
}

}  // namespace vitalcast
