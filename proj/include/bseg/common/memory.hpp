#pragma once

namespace bseg {

// Keeps freed tape buffers in the heap instead of returning them to the OS,
// so each training step reuses already-mapped pages. Idempotent.
void retain_freed_memory();

}  // namespace bseg
