#include <stdio.h>
#include "symdiff.h"

int main(void) {
    size_t perm[5] = {2, 0, 3, 1, 4};
    size_t rising = 0;
    if (sd_rising_sequences(perm, 5, &rising) != SD_STATUS_OK) {
        fprintf(stderr, "%s\n", sd_last_error());
        return 1;
    }
    printf("rising=%zu\n", rising);

    SdEulerian *table = NULL;
    if (sd_eulerian_new(52, &table) != SD_STATUS_OK) {
        fprintf(stderr, "%s\n", sd_last_error());
        return 1;
    }
    double tv = 0.0;
    sd_eulerian_tv_to_uniform(table, 7, &tv);
    printf("tv52_7=%.6f\n", tv);
    sd_eulerian_free(table);

    char *json = NULL;
    if (sd_plan_schedule(100, 0.005, 0.3, &json) != SD_STATUS_OK) {
        fprintf(stderr, "%s\n", sd_last_error());
        return 1;
    }
    printf("%s\n", json);
    sd_string_free(json);

    size_t bad[3] = {0, 0, 1};
    SdStatus status = sd_rising_sequences(bad, 3, &rising);
    printf("status=%d error=%s\n", (int)status, sd_last_error());
    return status == SD_STATUS_INVALID_PERMUTATION ? 0 : 1;
}
