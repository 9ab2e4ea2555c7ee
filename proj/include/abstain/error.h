#ifndef ABSTAIN_ERROR_H_
#define ABSTAIN_ERROR_H_

#include <stdexcept>
#include <string>

namespace abstain {

// Invalid input: schema violations, out-of-range parameters, missing files.
// The CLI maps these to exit status 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric failure such as a diverging training run. Exit status 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace abstain

#endif  // ABSTAIN_ERROR_H_
