#pragma once

namespace issgd {

// Sets the global log level from ISSGD_LOG (trace, debug, info, warn, error,
// critical, off). Defaults to info.
void init_logging();

}  // namespace issgd
