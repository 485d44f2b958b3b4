#pragma once

#include <stdexcept>
#include <string>

namespace craft {

// Error categories map 1:1 onto CLI exit codes (usage=1, data=2, provider=3).
enum class ErrorKind { Usage = 1, Data = 2, Provider = 3 };

class CraftError : public std::runtime_error {
public:
    CraftError(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

inline CraftError usage_error(std::string msg) { return {ErrorKind::Usage, std::move(msg)}; }
inline CraftError data_error(std::string msg) { return {ErrorKind::Data, std::move(msg)}; }
inline CraftError provider_error(std::string msg) { return {ErrorKind::Provider, std::move(msg)}; }

}  // namespace craft
