/* Z = X + Y over N elements. */
int kernel_main(int argc, char **argv) {
    ten_t x, y, z;
    if (ten_load(argv[1], &x) || ten_load(argv[2], &y) || ten_load(argv[3], &z)) return 1;
    long n = arg_int(argc, argv, "N", x.n);
    for (long i = 0; i < n; i++) z.data[i] = x.data[i] + y.data[i];
    int rc = ten_save(argv[3], &z);
    ten_free(&x);
    ten_free(&y);
    ten_free(&z);
    return rc;
}
