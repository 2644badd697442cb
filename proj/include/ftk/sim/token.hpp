#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "ftk/error.hpp"

namespace ftk::sim {

class World;

/// Base of communication failures surfaced to rank programs.
class CommError : public Error {
public:
    using Error::Error;
};

/// A peer taking part in the operation has been lost.
class RankFailure : public CommError {
public:
    RankFailure(int victim, const std::string &what) : CommError(what), victim_(victim) {}
    int victim() const { return victim_; }

private:
    int victim_;
};

/// The communicator was revoked by some member.
class Revoked : public CommError {
public:
    using CommError::CommError;
};

/// Operation misuse: mismatched collective arguments, shrink on a healthy communicator.
class ProtocolError : public CommError {
public:
    using CommError::CommError;
};

/// The scheduler found ranks blocked on operations that can never complete.
class DeadlockDetected : public CommError {
public:
    using CommError::CommError;
};

/// Injected fault raised inside rank-local user code.
class SoftFault : public Error {
public:
    SoftFault(int rank, const std::string &what) : Error(what), rank_(rank) {}
    int rank() const { return rank_; }

private:
    int rank_;
};

/// Unwinds the program of a rank that suffered a hard fault. Deliberately not
/// an ftk::Error so solver-level handlers cannot swallow it.
struct RankKilled {
    int rank;
};

enum class TokenState { pending, ready, failed };
enum class FailureKind { none, rank_failure, revoked, protocol, deadlock };

namespace detail {

struct SlotBase {
    virtual ~SlotBase() = default;

    TokenState state = TokenState::pending;
    FailureKind failure = FailureKind::none;
    int culprit = -1;
    std::string reason;
    World *world = nullptr; // null for locally completed tokens
    int owner = -1;
    std::uint64_t op_id = 0;
    bool log_harvest = false;

    [[noreturn]] void rethrow() const;
};

template <class T>
struct Slot : SlotBase {
    std::optional<T> value;
};

void block_on(World &world, SlotBase &slot);
TokenState query(World &world, const SlotBase &slot);
void harvested(World &world, const SlotBase &slot);

} // namespace detail

/// Future-style handle for an asynchronous operation.
///
/// `wait()` returns once the operation is ready or failed; `get()` yields the
/// payload exactly once (re-raising the failure instead if there is one) and
/// leaves the token invalid.
template <class T>
class CompletionToken {
public:
    CompletionToken() = default;
    explicit CompletionToken(std::shared_ptr<detail::Slot<T>> slot) : slot_(std::move(slot)) {}

    static CompletionToken completed(T value)
    {
        auto s = std::make_shared<detail::Slot<T>>();
        s->state = TokenState::ready;
        s->value = std::move(value);
        return CompletionToken(std::move(s));
    }

    void wait()
    {
        require(valid(), "CompletionToken: wait on invalid token");
        if (slot_->world) detail::block_on(*slot_->world, *slot_);
    }

    bool ready() const { return valid() && state() != TokenState::pending; }
    bool valid() const { return static_cast<bool>(slot_); }

    TokenState state() const
    {
        require(valid(), "CompletionToken: state of invalid token");
        return slot_->world ? detail::query(*slot_->world, *slot_) : slot_->state;
    }

    T get()
    {
        wait();
        auto slot = std::move(slot_);
        if (slot->state == TokenState::failed) slot->rethrow();
        if (slot->world && slot->log_harvest) detail::harvested(*slot->world, *slot);
        return std::move(*slot->value);
    }

private:
    std::shared_ptr<detail::Slot<T>> slot_;
};

} // namespace ftk::sim
