from adaptopt.commands import cli

if __name__ == '__main__':
    # python run.py run configs/cantilever_cnf.cfg
    cli(obj={})
