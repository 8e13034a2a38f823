# routes/adversarial.py
import click

from routes import common_options, execute
from utils.adversarial import adv_demo_train
from utils.io import write_json


def run_adv_demo(app, run_config):
    report = adv_demo_train(domains=run_config.domains, classes=run_config.classes,
                            grl_lambda=run_config.grl_lambda, gamma=run_config.gamma,
                            epochs=run_config.epochs, seed=run_config.seed,
                            layer_weights=run_config.layer_weights,
                            adv_weight=run_config.adv_weight, s_thre=run_config.s_thre,
                            acc_decay=app.config.ACC_DECAY)
    write_json(run_config.output, report, schema_version=app.config.SCHEMA_VERSION)
    return report['final']


HANDLERS = {'adv-demo': run_adv_demo}


@click.command('adv-demo')
@click.option('--domains', type=int, default=None, help='Number of synthetic domains.')
@click.option('--classes', type=int, default=None, help='Number of part classes (2..9).')
@click.option('--lambda', 'grl_lambda', type=float, default=None,
              help='Gradient reversal strength (0 disables adaptation).')
@click.option('--gamma', type=float, default=None, help='Focal exponent.')
@click.option('--epochs', type=int, default=None, help='Full-batch training epochs.')
@click.option('--seed', type=int, default=None, help='Data and initialization seed.')
@click.option('--adv-weight', type=float, default=None, help='Weight of the adversarial loss.')
@click.option('--s-thre', type=float, default=None, help='Proposal score cut for the queries.')
@common_options
@click.pass_obj
def adv_demo_command(app, domains, classes, grl_lambda, gamma, epochs, seed, adv_weight, s_thre,
                     output, config_path):
    """Train the toy domain-adversarial model and report per-epoch statistics."""
    execute(app, 'adv-demo', config_path, output=output, domains=domains, classes=classes,
            grl_lambda=grl_lambda, gamma=gamma, epochs=epochs, seed=seed,
            adv_weight=adv_weight, s_thre=s_thre)


COMMANDS = [adv_demo_command]
