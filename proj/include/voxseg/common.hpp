#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace voxseg {

inline constexpr const char* version_string = "0.1.0";

// Error categories map 1:1 onto CLI exit codes.
enum class errc {
    config = 2,   // bad configuration / bad arguments
    data = 3,     // malformed files, inconsistent inputs, empty masks
    divergence = 4// non-finite loss or gradients during training
};

class error : public std::runtime_error {
public:
    error(errc c, const std::string& msg) : std::runtime_error(msg), category_(c) {}
    errc category() const { return category_; }
    const char* category_name() const {
        switch (category_) {
            case errc::config: return "config";
            case errc::data: return "data";
            case errc::divergence: return "divergence";
        }
        return "unknown";
    }

private:
    errc category_;
};

[[noreturn]] inline void fail_config(const std::string& msg) { throw error(errc::config, msg); }
[[noreturn]] inline void fail_data(const std::string& msg) { throw error(errc::data, msg); }
[[noreturn]] inline void fail_divergence(const std::string& msg) { throw error(errc::divergence, msg); }

enum class tile_mode { nonoverlap, overlap };

inline const char* tile_mode_name(tile_mode m) {
    return m == tile_mode::nonoverlap ? "nonoverlap" : "overlap";
}

} // namespace voxseg
