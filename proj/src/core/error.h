#pragma once

#include <stdexcept>
#include <string>

namespace tidal {

// Error taxonomy shared by every module. The C API maps each subclass to a
// td_status code; inside the core we just throw.
struct error : std::runtime_error {
    explicit error(const std::string & msg) : std::runtime_error(msg) {}
};

struct shape_error    : error { using error::error; };  // dimension mismatch
struct budget_error   : error { using error::error; };  // top-k budget out of range
struct bounds_error   : error { using error::error; };  // index past cache length
struct schedule_error : error { using error::error; };  // invalid layer schedule
struct format_error   : error { using error::error; };  // malformed weight file
struct state_error    : error { using error::error; };  // operation on unusable state
struct input_error    : error { using error::error; };  // bad user-supplied data

} // namespace tidal
