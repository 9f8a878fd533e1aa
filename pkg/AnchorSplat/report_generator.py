from pathlib import Path
from AnchorSplat.logging import log_message


class ReportGenerator:
    """
    plain text reports: gradient check results and densification
    decision pathways
    """

    def __init__(self, report_file_path, title=None):
        self.report_file_path = Path(report_file_path)
        log_message("writing " + self.report_file_path.as_posix())
        self.f = self.report_file_path.open(mode='w')
        if title is not None:
            self.f.write(title + '\n')
            self.f.write('=' * len(title) + '\n\n')

    def finished(self):
        self.f.close()

    def emit_newline(self):
        self.f.write('\n')

    def emit_newpage(self):
        self.f.write('\n' + '-' * 72 + '\n\n')

    def emit_verbatim(self, s):
        for line in s.splitlines():
            self.f.write('    ' + line + '\n')

    def emit_text(self, s):
        self.f.write(s + '\n')

    def emit_property(self, name, trials, worst, threshold, passed):
        self.f.write(
            ('PASS' if passed else 'FAIL') + '  ' +
            name.ljust(32) +
            ' trials=' + str(trials).ljust(6) +
            ' worst=' + ('%.3e' % worst) +
            ' threshold=' + ('%.1e' % threshold) + '\n')

    def emit_splat(self, index, splat, decision_pathway=None):
        fields = ' '.join(
            key + '=' + ('%.4g' % value)
            for key, value in splat.items() if key != 'index')
        self.f.write('splat ' + str(index) + ': ' + fields + '\n')
        if decision_pathway is not None:
            for step in decision_pathway:
                self.emit_verbatim(str(step))
