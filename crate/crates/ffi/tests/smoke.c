#include <stdio.h>

#include "soap_ffi.h"

int main(void) {
    double scores[] = {0.9, 0.8, 0.7};
    int8_t labels[] = {1, -1, 1};
    double ap = 0.0;
    if (soap_average_precision(scores, labels, 3, &ap) != SOAP_STATUS_OK) {
        return 1;
    }
    printf("ap=%f\n", ap);

    int8_t none[] = {-1, -1, -1};
    SoapStatus st = soap_average_precision(scores, none, 3, &ap);
    char msg[128];
    soap_last_error(msg, sizeof msg);
    printf("status=%d msg=%s\n", (int)st, msg);

    SoapDataset *data = NULL;
    SoapModel *model = NULL;
    if (soap_dataset_generate(200, 2, 0.1, 2.0, 0, &data) != SOAP_STATUS_OK ||
        soap_model_new_linear(2, true, &model) != SOAP_STATUS_OK) {
        return 1;
    }
    SoapTrainOptions opts = soap_train_options_default();
    opts.iters = 20;
    if (soap_train(model, data, &opts) != SOAP_STATUS_OK) {
        return 1;
    }
    soap_model_free(model);
    soap_dataset_free(data);
    return 0;
}
