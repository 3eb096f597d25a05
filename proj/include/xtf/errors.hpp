#pragma once

#include <stdexcept>
#include <string>

namespace xtf {

// Every failure the library reports derives from Error. `kind()` is what the
// CLI maps onto exit codes, so keep it stable.
class Error : public std::runtime_error {
 public:
  enum class Kind {
    kDimension,
    kConfig,
    kInput,
    kContract,
    kTraining,
    kGeometry,
    kConsistency,
    kDegenerate,
    kPrecondition,
    kUnsupported,
    kNumeric,
  };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

  // Input-side failures (bad files, bad arguments, bad data) versus
  // violated internal contracts.
  bool is_input_error() const noexcept {
    return kind_ == Kind::kInput || kind_ == Kind::kConfig || kind_ == Kind::kConsistency ||
           kind_ == Kind::kUnsupported;
  }

 private:
  Kind kind_;
};

#define XTF_DEFINE_ERROR(Name, K)                                   \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(Kind::K, what) {} \
  };

XTF_DEFINE_ERROR(DimensionError, kDimension)
XTF_DEFINE_ERROR(ConfigError, kConfig)
XTF_DEFINE_ERROR(InputError, kInput)
XTF_DEFINE_ERROR(ContractError, kContract)
XTF_DEFINE_ERROR(TrainingError, kTraining)
XTF_DEFINE_ERROR(GeometryError, kGeometry)
XTF_DEFINE_ERROR(ConsistencyError, kConsistency)
XTF_DEFINE_ERROR(DegenerateError, kDegenerate)
XTF_DEFINE_ERROR(PreconditionError, kPrecondition)
XTF_DEFINE_ERROR(UnsupportedError, kUnsupported)
XTF_DEFINE_ERROR(NumericError, kNumeric)

#undef XTF_DEFINE_ERROR

}  // namespace xtf
