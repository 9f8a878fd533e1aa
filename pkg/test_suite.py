# pytest collection wiring for the script-style suite in test.py.
# test.py is run unchanged as `python test.py 2`; this only prepares the
# environment it expects (a `python` on PATH for mpirun, and Open MPI
# settings so mpirun works as root on machines with fewer cores than ranks).
import os
import subprocess
import sys
import tempfile

HERE = os.path.dirname(os.path.abspath(__file__))


def test_script_suite():
    with tempfile.TemporaryDirectory() as shim:
        os.symlink(sys.executable, os.path.join(shim, 'python'))
        env = dict(os.environ)
        env['PATH'] = shim + os.pathsep + env.get('PATH', '')
        env.setdefault('OMPI_ALLOW_RUN_AS_ROOT', '1')
        env.setdefault('OMPI_ALLOW_RUN_AS_ROOT_CONFIRM', '1')
        env.setdefault('OMPI_MCA_rmaps_base_oversubscribe', '1')
        env.setdefault('PRTE_MCA_rmaps_default_mapping_policy', ':oversubscribe')
        result = subprocess.run(
            [sys.executable, 'test.py', '2'],
            cwd=HERE, env=env,
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    output = result.stdout
    assert result.returncode == 0, output
    assert '\u001b[31;1m' not in output, output
