#include "cg_runtime.h"

#include <pthread.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#define CG_NUM_PES 64

static _Thread_local int cg_current_pe = -1;
static int cg_in_spawn = 0;

static pthread_barrier_t cg_barrier;
static int cg_threaded_run = 0;

int cg_num_pes(void) { return CG_NUM_PES; }

int cg_pe_id(void) { return cg_current_pe; }

void cg_dma_get(void* dst, const void* src, unsigned long block,
                unsigned long stride, unsigned long count) {
    char* d = (char*)dst;
    const char* s = (const char*)src;
#ifdef CG_DEBUG_BOUNDS
    if ((dst == NULL || src == NULL) && block && count) {
        fprintf(stderr, "cg_dma_get: null pointer\n");
        abort();
    }
#endif
    for (unsigned long i = 0; i < count; ++i) {
        memcpy(d, s, block);
        d += block;
        s += stride;
    }
}

void cg_dma_put(void* dst, const void* src, unsigned long block,
                unsigned long stride, unsigned long count) {
    char* d = (char*)dst;
    const char* s = (const char*)src;
#ifdef CG_DEBUG_BOUNDS
    if ((dst == NULL || src == NULL) && block && count) {
        fprintf(stderr, "cg_dma_put: null pointer\n");
        abort();
    }
#endif
    for (unsigned long i = 0; i < count; ++i) {
        memcpy(d, s, block);
        d += stride;
        s += block;
    }
}

void cg_sync(void) {
    if (cg_threaded_run) {
        pthread_barrier_wait(&cg_barrier);
    }
    /* sequential mode: each kernel runs to completion, nothing to wait on */
}

struct cg_task {
    void (*kernel)(void*);
    void* para;
    int pe;
};

static void* cg_thread_main(void* arg) {
    struct cg_task* task = (struct cg_task*)arg;
    cg_current_pe = task->pe;
    task->kernel(task->para);
    cg_current_pe = -1;
    return NULL;
}

void cg_spawn(void (*kernel)(void*), void* para) {
    if (kernel == NULL) {
        fprintf(stderr, "cg_spawn: null kernel\n");
        abort();
    }
    if (cg_in_spawn || cg_current_pe >= 0) {
        fprintf(stderr, "cg_spawn: nested spawn is not allowed\n");
        abort();
    }
    cg_in_spawn = 1;
    const char* env = getenv("CG_THREADS");
    cg_threaded_run = (env != NULL && env[0] == '1');
    if (cg_threaded_run) {
        pthread_t threads[CG_NUM_PES];
        struct cg_task tasks[CG_NUM_PES];
        pthread_barrier_init(&cg_barrier, NULL, CG_NUM_PES);
        for (int pe = 0; pe < CG_NUM_PES; ++pe) {
            tasks[pe].kernel = kernel;
            tasks[pe].para = para;
            tasks[pe].pe = pe;
            if (pthread_create(&threads[pe], NULL, cg_thread_main, &tasks[pe])) {
                fprintf(stderr, "cg_spawn: thread creation failed\n");
                abort();
            }
        }
        for (int pe = 0; pe < CG_NUM_PES; ++pe) {
            pthread_join(threads[pe], NULL);
        }
        pthread_barrier_destroy(&cg_barrier);
    } else {
        for (int pe = 0; pe < CG_NUM_PES; ++pe) {
            cg_current_pe = pe;
            kernel(para);
        }
        cg_current_pe = -1;
    }
    cg_in_spawn = 0;
    cg_threaded_run = 0;
}
