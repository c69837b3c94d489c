"""floorba solver module

This module supplies the iterative minimizer used by the bundle
adjuster and the log it keeps.

    DESCENT         gradient descent with momentum and a two-stage
                    learning rate schedule
    ConvergenceLog  per-step records of the learning rate and the loss
                    terms
"""

import numpy as np
import floorba as fb


class ConvergenceLog:
    """Per-step optimization records
    log = ConvergenceLog()

Each record holds the step number, the learning rate, the total loss,
and the values of the loss terms.  The terms are named by 'fields'.
log.lines() renders the records as line-oriented text,
    # step lr L L_geom L_floor L_walls
    0 0.001 1.234... 0.5... 0.01... 0.2...
"""
    fields = ('geom', 'floor', 'walls')

    def __init__(self):
        self.step = []
        self.lr = []
        self.loss = []
        self.terms = {name:[] for name in self.fields}

    def __len__(self):
        return len(self.step)

    def __repr__(self):
        return 'ConvergenceLog(<%d records>)'%len(self)

    def append(self, step, lr, loss, terms):
        self.step.append(int(step))
        self.lr.append(float(lr))
        self.loss.append(float(loss))
        for name in self.fields:
            self.terms[name].append(float(terms.get(name, 0.)))

    def array(self):
        """(K,6) array of step, lr, L, and the terms"""
        if not self.step:
            return np.zeros((0, 3 + len(self.fields)))
        return np.column_stack([self.step, self.lr, self.loss] +
                [self.terms[name] for name in self.fields])

    def lines(self):
        out = ['# step lr L ' + ' '.join('L_' + name for name in self.fields) + '\n']
        for ii in range(len(self)):
            values = [self.lr[ii], self.loss[ii]] + \
                    [self.terms[name][ii] for name in self.fields]
            out.append('%d '%self.step[ii] + ' '.join('%.17g'%v for v in values) + '\n')
        return out

    def write(self, path):
        """Write the log to a text file"""
        try:
            with open(path, 'w') as ff:
                ff.writelines(self.lines())
        except OSError as err:
            fb.utility.print_error('Could not write the convergence log to ' + repr(path))
            raise fb.utility.FBFileError(str(err))

    @classmethod
    def read(cls, path):
        """Read a log written by write()"""
        out = cls()
        for lineno,tokens in fb.dat._records(path):
            if len(tokens) != 3 + len(cls.fields):
                raise fb.utility.FBFileError('%s:%d: malformed log record'%(path, lineno))
            values = fb.dat._floats(path, lineno, tokens)
            out.append(int(values[0]), values[1], values[2],
                    dict(zip(cls.fields, values[3:])))
        return out


class _proto_solver_(object):
    """The prototype solver class

_proto_solver_ defines attributes:

    epsilon     the loss change below which the iteration is considered
                converged

    small       a tiny number representative of "numerically zero"
                (default = 1e-10)

    max_iter    integer maximum number of iterations allowed
"""
    def __init__(self, epsilon=1e-5, small=1e-10, max_iter=40000):
        self.epsilon = epsilon
        self.small = small
        self.max_iter = max_iter


class descent(_proto_solver_):
    """DESCENT  gradient descent with momentum
    solver = descent(fdf, retract, ...)
    x, log = solver(x0)

fdf is a callable that evaluates the objective,
    loss, grad, terms = fdf(x)
where terms is a dictionary of the individual loss terms for the log.
retract is a callable that applies a step to the variable,
    x_new = retract(x, dx)
For poses, this is PoseArray.retract.

The update is
    v <- momentum v + grad
    x <- retract(x, -lr v)
The learning rate is lr_initial for steps below lr_switch_step and
lr_reduced from then on.  Once the reduced rate is in effect, the
iteration stops when the loss changes by less than epsilon between
consecutive steps.  It always stops after max_iter steps.

A non-finite loss raises FBAnalysisError naming the terms at fault.

Keywords not given are drawn from the configuration: 'lr_initial',
'lr_reduced', 'lr_switch_step', 'convergence_eps', 'momentum',
'max_steps', and 'ba_verbose'.

The optional callback(step, x) is called before every step.  When it
returns True, the targets of the objective were changed.  The momentum
is then discarded and the convergence test is skipped for that step.

    _verbose        print an iteration table to stdout
    _report_every   steps between table rows (default 500)
"""
    def __init__(self, fdf, retract, lr_initial=None, lr_reduced=None,
            lr_switch_step=None, momentum=None, **kwarg):
        c = fb.config
        kwarg.setdefault('epsilon', c['convergence_eps'])
        kwarg.setdefault('max_iter', c['max_steps'])
        super(descent,self).__init__(**kwarg)
        self.lr_initial = c['lr_initial'] if lr_initial is None else float(lr_initial)
        self.lr_reduced = c['lr_reduced'] if lr_reduced is None else float(lr_reduced)
        self.lr_switch_step = c['lr_switch_step'] if lr_switch_step is None else int(lr_switch_step)
        self.momentum = c['momentum'] if momentum is None else float(momentum)
        self._verbose = c['ba_verbose']
        self._report_every = 500

        if not hasattr(fdf, '__call__') or not hasattr(retract, '__call__'):
            raise fb.utility.FBParamError('DESCENT needs callable fdf and retract arguments.')
        if not (0. <= self.momentum < 1.):
            raise fb.utility.FBParamError('momentum must be in [0,1): %r'%self.momentum)
        if not (self.lr_initial > 0 and self.lr_reduced > 0):
            raise fb.utility.FBParamError('Learning rates must be positive.')
        self._fdf = fdf
        self._retract = retract

    def __repr__(self):
        return 'descent(lr=%r/%r, switch=%d, momentum=%r)'%(self.lr_initial,
                self.lr_reduced, self.lr_switch_step, self.momentum)

    def lr(self, step):
        """The learning rate in effect at a step"""
        return self.lr_initial if step < self.lr_switch_step else self.lr_reduced

    def __call__(self, x, callback=None, log=None, first_step=0):
        if log is None:
            log = ConvergenceLog()
        velocity = None
        loss_old = None
        rows = 0
        for count in range(self.max_iter):
            step = first_step + count
            changed = False
            if callback is not None:
                changed = bool(callback(step, x))
                if changed:
                    velocity = None
            loss,grad,terms = self._fdf(x)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                bad = [name for name,value in terms.items() if not np.isfinite(value)]
                fb.utility.print_error('The loss became non-finite at step %d.'%step)
                raise fb.utility.FBAnalysisError(
                        'Non-finite loss at step %d in term(s): %s'%(step,
                        ', '.join(bad) if bad else 'gradient'))
            lr = self.lr(count)
            log.append(step, lr, loss, terms)

            if self._verbose and count % self._report_every == 0:
                if rows % 10 == 0:
                    print("{:>8s}{:>12s}{:>15s}".format('step','lr','loss') +
                            ''.join("{:>15s}".format(name) for name in terms))
                print("{:8d}{:12.2e}{:15.6e}".format(step, lr, loss) +
                        ''.join("{:15.6e}".format(v) for v in terms.values()))
                rows += 1

            # Test for convergence
            if count > self.lr_switch_step and not changed and \
                    loss_old is not None and abs(loss - loss_old) < self.epsilon:
                break
            loss_old = loss

            if velocity is None:
                velocity = np.array(grad, dtype=float)
            else:
                velocity = self.momentum * velocity + grad
            x = self._retract(x, -lr * velocity)
        return x, log
