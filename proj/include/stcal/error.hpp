#pragma once

#include <stdexcept>
#include <string>

namespace stcal {

// All library failures surface as Error with a category. Categories map to
// CLI exit codes: config/dimension/domain/contract are usage errors (exit 1),
// io/runtime are operational failures (exit 2).
class Error : public std::runtime_error {
  public:
    enum class Kind { dimension, domain, contract, config, io, runtime };

    Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

inline Error dimension_error(const std::string& msg) { return Error(Error::Kind::dimension, msg); }
inline Error domain_error(const std::string& msg) { return Error(Error::Kind::domain, msg); }
inline Error contract_error(const std::string& msg) { return Error(Error::Kind::contract, msg); }
inline Error config_error(const std::string& msg) { return Error(Error::Kind::config, msg); }
inline Error io_error(const std::string& msg) { return Error(Error::Kind::io, msg); }
inline Error runtime_error(const std::string& msg) { return Error(Error::Kind::runtime, msg); }

}  // namespace stcal
