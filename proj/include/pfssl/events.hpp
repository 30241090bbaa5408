#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace pfssl {

enum class EventKind {
    replace,    // candidate model downloaded during a search round
    update,     // cached helper refreshed from the pool
    sample,     // client picked for this round's training
    aggregate,
    pseudo_label,
    train,
    upload,
    skip,       // a transfer that was considered and not made
    fill,       // helper-list fill on first participation
    broadcast,  // global model download (FedAvg-style baseline)
};

std::string_view to_string(EventKind k);
EventKind event_kind_from_string(std::string_view name);

constexpr bool is_download(EventKind k) noexcept {
    return k == EventKind::replace || k == EventKind::update || k == EventKind::fill || k == EventKind::broadcast;
}

struct RoundEvent {
    int round = 0;
    EventKind kind = EventKind::skip;
    std::size_t client = 0;
    std::optional<std::size_t> peer;
    std::uint64_t model_units = 0;

    friend bool operator==(const RoundEvent&, const RoundEvent&) = default;
};

}  // namespace pfssl
