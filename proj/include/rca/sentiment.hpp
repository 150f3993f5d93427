#pragma once

namespace rca {

// Sentiment classes. Positive is class 0 everywhere in the toolkit, which
// puts the positive block first in the adversary's joint labels.
inline constexpr int kPositive = 0;
inline constexpr int kNegative = 1;

}  // namespace rca
