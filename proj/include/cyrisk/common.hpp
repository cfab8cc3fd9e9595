#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cyrisk {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat32 = Eigen::Matrix<double, 3, 2>;
using Eigen::VectorXd;

// Error taxonomy mapped to CLI exit codes: config/domain/state -> 1,
// numerical guards (CFL, inverse-utility range, projection overflow) -> 2.
enum class ErrorKind { config, domain, state, range, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& msg) { return Error(ErrorKind::config, msg); }
inline Error domain_error(const std::string& msg) { return Error(ErrorKind::domain, msg); }
inline Error state_error(const std::string& msg) { return Error(ErrorKind::state, msg); }
inline Error range_error(const std::string& msg) { return Error(ErrorKind::range, msg); }
inline Error numerical_error(const std::string& msg) { return Error(ErrorKind::numerical, msg); }

// FNV-1a, used for scenario content hashes embedded in run manifests.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cyrisk
