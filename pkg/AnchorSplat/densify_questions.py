from monty.json import MSONable
from AnchorSplat.constants import Terminal

"""
The densification decision tree:

A question is a function q(splat, params) -> Bool

splat is a dict of statistics for a single splat:

        splat = { 'index',
                  'opacity',
                  'gradient' : mean screen space positional gradient norm,
                  'max_scale',
                  'visible_count' }

params is a dict:

        params = { 'iteration' }

A node is either a Terminal or a non empty list [(question, node)]

For the return value of a question, True means travel to this node and
False means try next question in the list. Getting stuck at a non
terminal node is an error.

The terminal reached tells densify_and_prune what to do with the
splat: KEEP, DISCARD (prune), CLONE or SPLIT.

logging decision tree: a second tree whose KEEP terminal means the
decision pathway of the splat is written to the densification report.
"""


def run_decision_tree(
        splat,
        params,
        decision_tree,
        decision_pathway=None):
    node = decision_tree

    while type(node) == list:
        next_node = None
        for (question, new_node) in node:
            if question(splat, params):

                if decision_pathway is not None:
                    decision_pathway.append(question)

                next_node = new_node
                break

        node = next_node

    if type(node) == Terminal:
        if decision_pathway is not None:
            decision_pathway.append(node)
        return node
    else:
        raise Exception(
            """
            unexpected node type reached.
            this is usually caused because none of the questions in some node returned True.
            """)


class opacity_below_threshold(MSONable):

    def __init__(self, threshold):
        self.threshold = threshold

    def __str__(self):
        return "opacity is below threshold=" + str(self.threshold)

    def __call__(self, splat, params):
        return splat['opacity'] < self.threshold


class gradient_below_threshold(MSONable):

    def __init__(self, threshold):
        self.threshold = threshold

    def __str__(self):
        return "mean screen gradient is below threshold=" + str(self.threshold)

    def __call__(self, splat, params):
        return splat['gradient'] < self.threshold


class scale_above_threshold(MSONable):

    def __init__(self, threshold):
        self.threshold = threshold

    def __str__(self):
        return "largest scale is above threshold=" + str(self.threshold)

    def __call__(self, splat, params):
        return splat['max_scale'] > self.threshold


class never_seen(MSONable):

    def __init__(self):
        pass

    def __str__(self):
        return "splat never contributed to a pixel"

    def __call__(self, splat, params):
        return splat['visible_count'] == 0


class splat_default_true(MSONable):

    def __init__(self):
        pass

    def __str__(self):
        return "default true"

    def __call__(self, splat, params):
        return True


def densify_decision_tree(tau_opacity, tau_grad, split_scale):
    return [
        (opacity_below_threshold(tau_opacity), Terminal.DISCARD),
        (never_seen(), Terminal.KEEP),
        (gradient_below_threshold(tau_grad), Terminal.KEEP),
        (scale_above_threshold(split_scale), Terminal.SPLIT),
        (splat_default_true(), Terminal.CLONE)
    ]


# logs every splat which gets pruned, cloned or split
def changed_splats_logging_tree(tau_opacity, tau_grad):
    return [
        (opacity_below_threshold(tau_opacity), Terminal.KEEP),
        (never_seen(), Terminal.DISCARD),
        (gradient_below_threshold(tau_grad), Terminal.DISCARD),
        (splat_default_true(), Terminal.KEEP)
    ]
