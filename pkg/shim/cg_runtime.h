/* Host-native runtime for generated core-group programs.
 *
 * The generated code sees one control thread that launches a kernel across
 * num_pes compute elements (cg_spawn), strided DMA transfers between main
 * memory and per-PE scratchpad arrays (cg_dma_get / cg_dma_put), and a
 * barrier (cg_sync).  The scratchpad side of a transfer is always contiguous;
 * the memory side advances by `stride` bytes per `block`-byte row.
 *
 * Build (from a tree emitted into out/):
 *   cc out/main.c out/<layer>.c out/<layer>.slave.c ... shim/cg_runtime.c \
 *      -I shim -I out -o model
 *   ./model params.bin input.bin output.bin
 *
 * CG_THREADS=1 in the environment runs the compute elements on OS threads;
 * the default runs them sequentially.  Results are identical either way:
 * kernels may only write disjoint memory and there is an implicit barrier at
 * cg_spawn return.  Define CG_DEBUG_BOUNDS at compile time for per-transfer
 * pointer checks in debug builds.
 */

#ifndef CG_RUNTIME_H
#define CG_RUNTIME_H

#ifdef __cplusplus
extern "C" {
#endif

/* Copy `count` blocks of `block` bytes from main memory into a scratchpad
 * buffer; `src` advances by `stride` bytes per block, `dst` is contiguous. */
void cg_dma_get(void* dst, const void* src, unsigned long block,
                unsigned long stride, unsigned long count);

/* Copy `count` blocks of `block` bytes from a scratchpad buffer into main
 * memory; `dst` advances by `stride` bytes per block, `src` is contiguous. */
void cg_dma_put(void* dst, const void* src, unsigned long block,
                unsigned long stride, unsigned long count);

/* Run `kernel(para)` once per compute element id 0..cg_num_pes()-1.  All
 * invocations complete before cg_spawn returns.  Nested spawns abort. */
void cg_spawn(void (*kernel)(void*), void* para);

/* Compute element id of the calling kernel; -1 outside a spawned kernel. */
int cg_pe_id(void);

int cg_num_pes(void);

/* Barrier across the compute elements of the current spawn. */
void cg_sync(void);

#ifdef __cplusplus
}
#endif

#endif /* CG_RUNTIME_H */
