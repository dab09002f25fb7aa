#include <stdio.h>
#include <string.h>
#include "fls.h"

int main(void) {
    FlsChain *chain = NULL;
    if (fls_chain_new_synthetic(&chain) != FLS_STATUS_OK) return 1;
    size_t n = fls_chain_dof(chain);
    double q[16], seed[16], out[16], tip[3], port[3];
    if (n + 1 > 16) return 2;
    fls_chain_mid_configuration(chain, q);
    q[n] = 120.0;
    if (fls_fk(chain, q, tip, port) != FLS_STATUS_OK) return 3;
    memcpy(seed, q, sizeof(double) * (n + 1));
    seed[0] += 0.1;
    seed[n] = 100.0;
    FlsIkReport report;
    FlsStatus s = fls_ik_solve(chain, tip, port, seed, out, &report);
    if (s != FLS_STATUS_OK || !report.converged) return 4;

    char msg[128];
    if (fls_chain_new_synthetic(NULL) != FLS_STATUS_NULL_POINTER) return 5;
    size_t len = fls_last_error(msg, sizeof msg);
    if (len == 0 || strlen(msg) != len) return 6;

    fls_chain_free(chain);
    printf("ok dof=%zu iterations=%u tip=%.2e\n", n, report.iterations, report.residual_tip);
    return 0;
}
