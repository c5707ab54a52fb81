#include "cg_runtime.h"
#include "fc2_para.h"
#include "fc2.h"

void run_fc2(void* arena) {
    Para_fc2 para;
    para.arena = arena;
    para.x_off = 152UL; /* fc1.out */
    para.w_off = 160UL; /* fc2.w */
    para.y_off = 192UL; /* fc2.out */
    cg_spawn(fc2_slave_dense, &para);
}
