#pragma once

namespace spt {

// Training allocates and frees the same large activation buffers every step;
// handing them back to the OS each time turns every step into page faults.
// Call once at program start to keep freed memory inside the process
// (glibc only; a no-op elsewhere).
void retain_freed_memory();

}  // namespace spt
