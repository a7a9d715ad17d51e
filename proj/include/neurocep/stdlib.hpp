#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "neurocep/term.hpp"

namespace ncep {

/// Source of the bundled sequence library: `sequence/3`, `sequenceWithin/3`,
/// `sequenceEndingAt/3` plus reference clause definitions of `reverse/2` and
/// `previousTimeStamp/3` (the engine evaluates the latter two natively).
const std::string& stdlib_source();

/// Only the three sequence predicates, exactly as published.
std::string_view sequence_framework_source();

/// `stdlib_source()` parsed.
Program stdlib();

/// The ten sound class names, in class-id order.
const std::vector<std::string>& sound_class_names();

/// Complex-event constant for a simple-event class: `siren` -> `ceSiren`.
std::string complex_event_name(std::string_view class_name);

/// Rule text for the shipped configuration: one neural AD `digit/2` over the
/// given classes, one `happensAt/2` rule per class detecting a repeat of that
/// class within the window, and a `complex_events` directive listing the
/// complex-event constants in class order.
std::string repeat_rules_source(const std::vector<std::string>& classes);

/// stdlib() plus repeat_rules_source(sound_class_names()).
Program default_rules();

}  // namespace ncep
