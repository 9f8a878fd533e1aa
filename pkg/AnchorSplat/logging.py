from time import localtime, strftime

# test.py switches this off so PASS/FAIL lines stay readable
verbose = True

def set_verbosity(flag):
    global verbose
    verbose = flag

def log_message(*args, **kwargs):
    if verbose:
        print(
            '[' + strftime('%H:%M:%S', localtime()) + ']',
            *args, **kwargs)

def log_progress(label, done, total):
    log_message(label + ":", done, "/", total)
