#include "conformal_triage/errors.hpp"

namespace conformal_triage {

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error(ErrorKind::validation, "line " + std::to_string(line) + ": " + what), line_(line) {}

InvariantError::InvariantError(const std::string& id, const std::string& what)
    : Error(ErrorKind::validation, "profile '" + id + "': " + what), id_(id) {}

NumericalDivergence::NumericalDivergence(std::size_t epoch)
    : Error(ErrorKind::numerical, "non-finite training loss at epoch " + std::to_string(epoch)),
      epoch_(epoch) {}

BudgetExceedsPool::BudgetExceedsPool(std::size_t budget, std::size_t pool)
    : Error(ErrorKind::validation, "budget of " + std::to_string(budget) +
                                       " units exceeds query pool of " + std::to_string(pool)) {}

}  // namespace conformal_triage
