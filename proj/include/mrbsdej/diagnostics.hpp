#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mrbsdej {

/// Iterative solver stopped without meeting its tolerance. `log` carries the
/// per-iteration history (one human-readable line each).
class NonConvergence : public std::runtime_error {
public:
    NonConvergence(const std::string& what, std::vector<std::string> log)
        : std::runtime_error(what), log(std::move(log)) {}
    std::vector<std::string> log;
};

struct Warning {
    std::string code;
    std::string detail;
};

struct WarningLog {
    std::vector<Warning> entries;

    void add(std::string code, std::string detail) {
        entries.push_back({std::move(code), std::move(detail)});
    }
    bool empty() const { return entries.empty(); }
    std::size_t count(const std::string& code) const {
        std::size_t c = 0;
        for (const auto& e : entries) c += e.code == code;
        return c;
    }
};

}  // namespace mrbsdej
