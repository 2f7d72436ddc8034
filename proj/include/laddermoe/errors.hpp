// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every module. Each kind maps onto one failure
// class named in the module contracts (dimension, parameter, numeric, ...).

#pragma once

#include <stdexcept>
#include <string>

namespace laddermoe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define LADDERMOE_DEFINE_ERROR(Name)            \
  class Name : public Error {                   \
   public:                                      \
    using Error::Error;                         \
  };

LADDERMOE_DEFINE_ERROR(DimensionError)
LADDERMOE_DEFINE_ERROR(ParameterError)
LADDERMOE_DEFINE_ERROR(NumericError)
LADDERMOE_DEFINE_ERROR(DataError)
LADDERMOE_DEFINE_ERROR(FormatError)
LADDERMOE_DEFINE_ERROR(LayoutError)
LADDERMOE_DEFINE_ERROR(ThresholdError)
LADDERMOE_DEFINE_ERROR(EmptyInputError)
LADDERMOE_DEFINE_ERROR(IoError)

#undef LADDERMOE_DEFINE_ERROR

/// Thrown by the training loop when the loss turns non-finite. Carries the
/// path of the most recent checkpoint that was written successfully.
class NonFiniteLossError : public NumericError {
 public:
  NonFiniteLossError(const std::string& what, std::string last_good)
      : NumericError(what), last_good_checkpoint_(std::move(last_good)) {}
  const std::string& last_good_checkpoint() const { return last_good_checkpoint_; }

 private:
  std::string last_good_checkpoint_;
};

}  // namespace laddermoe
